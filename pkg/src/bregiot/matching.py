"""Matching-market pipeline: typed data, cross-validated cost learning and
prediction of held-out matchings.

The cost between a man of type ``i`` and a woman of type ``j`` is
``C = -U0^T A V0``, where the columns of ``U0`` and ``V0`` are type feature
vectors and ``A`` is a ``d x d`` affinity matrix.

Dataset directory layout (headerless CSV unless noted):

``types_men.csv``     d x n_types feature centroids of male types
``types_women.csv``   d x n_types feature centroids of female types
``matching.csv``      n_types x n_types pair counts
``individuals.csv``   optional, header ``id,sex,f1..fd``, sex in {M, F}
``pairs.csv``         optional, header ``man_id,woman_id``
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bcd import BcdConfig, solve_iot
from .errors import DataError, IoError
from .experiments import ExperimentConfig, _report, trial_rng
from .forward import SolverConfig, TransportProblem, solve_forward
from .io import read_matrix, write_matrix
from .sets import Affine

__all__ = [
    "MatchingDataset",
    "generate_synthetic_matching",
    "save_matching_dataset",
    "load_matching_dataset",
    "cluster_individuals",
    "fold_assignments",
    "exp_matching",
    "predict_plan",
]


@dataclass
class MatchingDataset:
    features_men: np.ndarray
    features_women: np.ndarray
    matching: np.ndarray
    pairs: np.ndarray | None = None  # (n_pairs, 2) type indices
    affinity: np.ndarray | None = None  # planted A, synthetic data only
    individual_features: tuple | None = None  # (men, women), row k is pair k

    def __post_init__(self):
        U, V, M = self.features_men, self.features_women, self.matching
        if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape:
            raise DataError(f"feature matrices must both be d x n_types, got {U.shape} and {V.shape}")
        k = U.shape[1]
        if M.shape != (k, k):
            raise DataError(f"matching is {M.shape}, expected {(k, k)}")
        if not np.all(np.isfinite(M)) or np.any(M < 0):
            bad = np.argwhere(~(M >= 0))[0]
            raise DataError(f"matching entry ({bad[0]}, {bad[1]}) is negative or not finite")
        rows = np.flatnonzero(M.sum(axis=1) <= 0)
        cols = np.flatnonzero(M.sum(axis=0) <= 0)
        if rows.size or cols.size:
            raise DataError(
                f"empty types in matching: rows {rows.tolist()}, columns {cols.tolist()}"
            )

    @property
    def d(self):
        return self.features_men.shape[0]

    @property
    def n_types(self):
        return self.features_men.shape[1]

    def pair_list(self):
        """One row ``(i, j)`` per observed pair; built from counts if needed."""
        if self.pairs is not None:
            return self.pairs
        counts = np.rint(self.matching).astype(np.int64)
        if not np.allclose(counts, self.matching):
            raise DataError("pair list needs integer counts in matching")
        i, j = np.nonzero(counts)
        reps = counts[i, j]
        return np.column_stack([np.repeat(i, reps), np.repeat(j, reps)])


def _entropy_plan(C, mu, nu, gamma):
    prob = TransportProblem(C, mu, nu, gamma, "entropy")
    return solve_forward(prob, SolverConfig()).plan


def generate_synthetic_matching(seed=0, d=11, n_types=50, n_pairs=50_000, gamma=1.0,
                                noiseless=False, individuals_noise=0.0):
    """Synthetic market with a planted affinity matrix.

    ``A`` has standard normal entries scaled by ``1 / d`` so that the cost
    entries have unit order of magnitude.  Type marginals are uniform(0.1, 1)
    draws, normalized.  With ``noiseless`` the matching is the exact plan of
    the planted cost; otherwise ``n_pairs`` pairs are drawn from it.
    """
    rng = trial_rng(seed, 0)
    U0 = rng.standard_normal((d, n_types))
    V0 = rng.standard_normal((d, n_types))
    A = rng.standard_normal((d, d)) / d
    C = -U0.T @ A @ V0
    mu = rng.uniform(0.1, 1.0, n_types)
    nu = rng.uniform(0.1, 1.0, n_types)
    X = _entropy_plan(C, mu / mu.sum(), nu / nu.sum(), gamma)
    if noiseless:
        return MatchingDataset(U0, V0, X, affinity=A)
    p = X.ravel() / X.sum()
    counts = rng.multinomial(n_pairs, p).reshape(X.shape).astype(float)
    ds = MatchingDataset(U0, V0, counts, affinity=A)
    ds.pairs = ds.pair_list()
    rng.shuffle(ds.pairs)
    if individuals_noise > 0:
        ds.individual_features = _individual_features(rng, ds, individuals_noise)
    return ds


def _individual_features(rng, ds, noise):
    pairs = ds.pair_list()
    men = ds.features_men[:, pairs[:, 0]].T + noise * rng.standard_normal((len(pairs), ds.d))
    women = ds.features_women[:, pairs[:, 1]].T + noise * rng.standard_normal((len(pairs), ds.d))
    return men, women


def save_matching_dataset(ds: MatchingDataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_matrix(root / "types_men.csv", ds.features_men)
    write_matrix(root / "types_women.csv", ds.features_women)
    write_matrix(root / "matching.csv", ds.matching)
    if ds.affinity is not None:
        write_matrix(root / "planted_affinity.csv", ds.affinity)
    ind = ds.individual_features
    if ind is not None:
        men, women = ind
        with open(root / "individuals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "sex"] + [f"f{k + 1}" for k in range(ds.d)])
            for k, row in enumerate(men):
                w.writerow([f"m{k}", "M"] + [f"{x:.17g}" for x in row])
            for k, row in enumerate(women):
                w.writerow([f"w{k}", "F"] + [f"{x:.17g}" for x in row])
        with open(root / "pairs.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["man_id", "woman_id"])
            for k in range(len(men)):
                w.writerow([f"m{k}", f"w{k}"])


def _read_individuals(path):
    men, women = {}, {}
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["id", "sex"]:
                raise DataError(f"{path}: header must start with id,sex")
            width = len(header)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != width:
                    raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
                try:
                    feats = np.array([float(x) for x in row[2:]])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: non-numeric feature") from None
                sex = row[1].strip().upper()
                if sex not in ("M", "F"):
                    raise DataError(f"{path}:{lineno}: sex must be M or F, got {row[1]!r}")
                (men if sex == "M" else women)[row[0]] = feats
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}", path=str(path)) from exc
    return men, women


def _read_pairs(path, men, women):
    out = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2 or row[0] not in men or row[1] not in women:
                    raise DataError(f"{path}:{lineno}: unknown man or woman id in {row}")
                out.append((row[0], row[1]))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}", path=str(path)) from exc
    return out


def cluster_individuals(men_features, women_features, pairs, k, seed=0):
    """Cluster each side into ``k`` types with k-means and aggregate pairs.

    Parameters
    ----------
    men_features, women_features : (n_pairs, d) arrays
        Features of the man and the woman in each observed pair.
    k : int
        Number of types per side.

    Returns
    -------
    MatchingDataset
    """
    from sklearn.cluster import KMeans

    del pairs  # row k of both arrays is pair k
    km_m = KMeans(n_clusters=k, max_iter=300, n_init=1, random_state=seed).fit(men_features)
    km_w = KMeans(n_clusters=k, max_iter=300, n_init=1, random_state=seed).fit(women_features)
    lm, lw = km_m.labels_, km_w.labels_
    counts = np.zeros((k, k))
    np.add.at(counts, (lm, lw), 1.0)
    return MatchingDataset(
        km_m.cluster_centers_.T.copy(),
        km_w.cluster_centers_.T.copy(),
        counts,
        pairs=np.column_stack([lm, lw]),
    )


def load_matching_dataset(root, k_cluster=None, seed=0) -> MatchingDataset:
    """Read a dataset directory; with ``k_cluster`` and individual-level files
    present, types are rebuilt by k-means instead."""
    root = Path(root)
    ind, prs = root / "individuals.csv", root / "pairs.csv"
    if k_cluster is not None:
        if not (ind.exists() and prs.exists()):
            raise DataError(f"{root}: clustering needs individuals.csv and pairs.csv")
        men, women = _read_individuals(ind)
        pairs = _read_pairs(prs, men, women)
        Fm = np.array([men[a] for a, _ in pairs])
        Fw = np.array([women[b] for _, b in pairs])
        return cluster_individuals(Fm, Fw, None, int(k_cluster), seed)
    for name in ("types_men.csv", "types_women.csv", "matching.csv"):
        if not (root / name).exists():
            raise DataError(f"{root}: missing {name}")
    return MatchingDataset(
        read_matrix(root / "types_men.csv"),
        read_matrix(root / "types_women.csv"),
        read_matrix(root / "matching.csv"),
    )


def fold_assignments(n_pairs, folds, seed):
    """Random partition of pair indices into ``folds`` nearly equal parts."""
    perm = trial_rng(seed, 1).permutation(n_pairs)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _normalize(counts):
    X = counts / counts.sum()
    return X, X.sum(axis=1), X.sum(axis=0)


def predict_plan(C, mu, nu, gamma=1.0):
    return _entropy_plan(C, mu, nu, gamma)


def _rmse(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _mae(a, b):
    return float(np.mean(np.abs(a - b)))


def exp_matching(ds: MatchingDataset, cfg: ExperimentConfig, folds=5) -> dict:
    """Cross-validated cost learning on a typed matching dataset.

    Each fold learns ``C`` in the affine set from the training pairs
    (entropy, ``cfg.gamma``, ``cfg.lam``, ``cfg.max_iters`` sweeps) and
    predicts the held-out matching from its marginals.  A product-of-marginals
    plan is the random baseline.  With ``cfg.options['noiseless']`` the whole
    matching is inverted once and the plan RMSE is reported instead.
    """
    gamma = float(np.atleast_1d(cfg.gamma)[0])
    lam = float(np.atleast_1d(cfg.lam)[0])
    cset = Affine(ds.features_men, ds.features_women)
    bcd = BcdConfig(max_iters=cfg.max_iters, kkt_tol=cfg.kkt_tol, c_block_mode=cfg.c_block_mode)
    trials = []
    if cfg.options.get("noiseless"):
        X, mu, nu = _normalize(ds.matching)
        t0 = time.perf_counter()
        C, _, _, rep = solve_iot(X, mu, nu, gamma, lam, cset, "entropy", bcd, zero_entries="allow")
        wall = time.perf_counter() - t0
        P = predict_plan(C, mu, nu, gamma)
        trials.append(
            {"trial": 0, "sub_seed": [cfg.seed, 0], "ok": True, "rmse": _rmse(P, X),
             "mae": _mae(P, X), "iterations": rep.iterations, "wall_time": wall}
        )
        return _report(cfg, trials, {"plan_rmse": trials[0]["rmse"], "plan_mae": trials[0]["mae"]})

    pairs = ds.pair_list()
    k = ds.n_types
    parts = fold_assignments(len(pairs), folds, cfg.seed)
    for f, test_idx in enumerate(parts):
        mask = np.ones(len(pairs), dtype=bool)
        mask[test_idx] = False
        train = np.zeros((k, k))
        test = np.zeros((k, k))
        np.add.at(train, (pairs[mask, 0], pairs[mask, 1]), 1.0)
        np.add.at(test, (pairs[~mask, 0], pairs[~mask, 1]), 1.0)
        rec = {"trial": f, "fold": f, "sub_seed": [cfg.seed, 1], "ok": False,
               "n_train": int(mask.sum()), "n_test": int((~mask).sum())}
        for name, M in (("train", train), ("test", test)):
            rows = np.flatnonzero(M.sum(axis=1) == 0)
            cols = np.flatnonzero(M.sum(axis=0) == 0)
            if rows.size or cols.size:
                raise DataError(
                    f"fold {f}: {name} split leaves empty types "
                    f"(rows {rows.tolist()}, columns {cols.tolist()})"
                )
        Xtr, mutr, nutr = _normalize(train)
        Xte, mute, nute = _normalize(test)
        t0 = time.perf_counter()
        C, _, _, rep = solve_iot(Xtr, mutr, nutr, gamma, lam, cset, "entropy", bcd,
                                 zero_entries="allow")
        wall = time.perf_counter() - t0
        P = predict_plan(C, mute, nute, gamma)
        R = np.outer(mute, nute)
        rec.update(
            ok=True,
            rmse=_rmse(P, Xte),
            mae=_mae(P, Xte),
            random_rmse=_rmse(R, Xte),
            random_mae=_mae(R, Xte),
            iterations=rep.iterations,
            final_kkt=rep.extra["final_kkt"],
            wall_time=wall,
        )
        trials.append(rec)
    good = [t for t in trials if t["ok"]]

    def mean(key):
        return float(np.mean([t[key] for t in good])) if good else math.nan

    agg = {
        "rmse": mean("rmse"),
        "mae": mean("mae"),
        "random_rmse": mean("random_rmse"),
        "random_mae": mean("random_mae"),
        "wall_time": mean("wall_time"),
        "beats_random_every_fold": all(t["rmse"] < t["random_rmse"] for t in good),
    }
    if ds.affinity is not None:
        agg["planted"] = True
    return _report(cfg, trials, agg)
