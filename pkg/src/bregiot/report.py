from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field


@dataclass
class SolveReport:
    """Iteration trace of a solver run.

    ``residuals`` holds the stopping metric per iteration, ``objective`` the
    objective value per iteration (index 0 is the starting point when the
    solver records it), ``steps`` one record per iteration with per-block
    step sizes.  ``wall_time`` is in seconds.
    """

    solver: str
    iterations: int = 0
    converged: bool = False
    termination: str = ""
    residuals: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "SolveReport":
        return cls(**d)
