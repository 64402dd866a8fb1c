"""Report records and their on-disk form (JSON summaries, CSV series)."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .. import __version__

__all__ = ["ReportRecord", "build_id", "write_records", "read_records", "write_series", "to_jsonable"]


def to_jsonable(x: Any) -> Any:
    if isinstance(x, Mapping):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def build_id(config: Mapping) -> str:
    """Content hash of package version and canonical config."""
    blob = json.dumps({"version": __version__, "config": to_jsonable(config)}, sort_keys=True)
    return hashlib.sha1(blob.encode()).hexdigest()[:12]


@dataclass
class ReportRecord:
    """One scalar result.

    ``passed`` is ``lower <= value <= upper`` whenever a bound is given, so it
    can be re-derived from the stored numbers; records without bounds are
    informational and have ``passed = None``.
    """

    kind: str
    name: str
    value: float
    params: dict = field(default_factory=dict)
    stderr: float | None = None
    lower: float | None = None
    upper: float | None = None
    extras: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    passed: bool | None = field(default=None)

    def __post_init__(self):
        self.value = float(self.value)
        for name in ("value", "stderr", "lower", "upper"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"record {self.name!r}: {name} is not finite ({v})")
        self.passed = self.check()

    def check(self) -> bool | None:
        if self.lower is None and self.upper is None:
            return None
        ok = True
        if self.lower is not None:
            ok &= self.value >= self.lower
        if self.upper is not None:
            ok &= self.value <= self.upper
        return bool(ok)

    def to_dict(self) -> dict:
        return to_jsonable(asdict(self))

    @classmethod
    def from_dict(cls, d: Mapping) -> ReportRecord:
        d = dict(d)
        stored = d.pop("passed", None)
        rec = cls(**d)
        if stored is not None and stored != rec.passed:
            raise ValueError(f"record {rec.name!r}: stored pass flag disagrees with its bounds")
        return rec

    def line(self) -> str:
        status = {True: "PASS", False: "FAIL", None: "INFO"}[self.passed]
        err = f" +- {self.stderr:.3g}" if self.stderr is not None else ""
        lo = "-inf" if self.lower is None else f"{self.lower:.6g}"
        hi = "inf" if self.upper is None else f"{self.upper:.6g}"
        return f"[{status}] {self.kind}/{self.name}: {self.value:.6g}{err} (bounds [{lo}, {hi}])"


def write_records(path: Path, records: Sequence[ReportRecord]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_records(path: Path) -> list[ReportRecord]:
    with open(path) as fh:
        return [ReportRecord.from_dict(d) for d in json.load(fh)]


def write_series(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with ``repr``-exact floats, so identical runs give identical bytes."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
