"""Experiment configuration: JSON documents validated against a JSON schema."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from ..dynamics import SolverConfig, Truncation

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "schema", "KINDS", "REQUIRED_PARAMS"]

KINDS = (
    "spectrum",
    "propagate",
    "decay_fit",
    "strichartz",
    "nlse_wnd",
    "nlse_random",
    "invariance",
    "converge_eps",
    "driver_continuity",
    "star_formula",
)

REQUIRED_PARAMS: dict[str, tuple[str, ...]] = {
    "spectrum": (),
    "propagate": ("t",),
    "decay_fit": ("t_min", "t_max"),
    "strichartz": ("r", "p", "T_values"),
    "nlse_wnd": (),
    "nlse_random": ("eps",),
    "invariance": ("eps",),
    "converge_eps": ("eps",),
    "driver_continuity": ("widths",),
    "star_formula": ("h_values", "t"),
}

NEEDS_NOISE = ("nlse_random", "invariance", "converge_eps")


class ConfigError(ValueError):
    pass


def schema() -> dict:
    text = resources.files("qgwnd.harness").joinpath("config.schema.json").read_text()
    return json.loads(text)


def _number(x) -> float:
    return math.inf if x in ("inf", "Infinity") else float(x)


@dataclass
class ExperimentConfig:
    kind: str
    name: str = ""
    graph: dict = field(default_factory=lambda: {"factory": {"kind": "star", "n": 3}})
    couplings: list = field(default_factory=list)
    default_coupling: dict = field(default_factory=lambda: {"kind": "kirchhoff"})
    mesh: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    datum: dict = field(default_factory=lambda: {"kind": "gaussian"})
    noise: dict = field(default_factory=lambda: {"kind": "ou", "gamma": 1.0, "s": 1.0})
    params: dict = field(default_factory=dict)
    trials: int = 1
    seed: int = 0
    output: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.name:
            self.name = self.kind
        self.validate()

    def validate(self) -> None:
        try:
            jsonschema.validate(self.as_dict(), schema())
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        missing = [k for k in REQUIRED_PARAMS[self.kind] if k not in self.params]
        if missing:
            raise ConfigError(f"kind {self.kind!r} needs params {missing}")
        if "file" in self.graph and not Path(self.graph["file"]).is_file():
            raise ConfigError(f"graph file {self.graph['file']!r} does not exist")
        self.solver_config()

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "graph": self.graph,
            "couplings": self.couplings,
            "default_coupling": self.default_coupling,
            "mesh": self.mesh,
            "solver": self.solver,
            "datum": self.datum,
            "noise": self.noise,
            "params": self.params,
            "trials": self.trials,
            "seed": self.seed,
            "output": self.output,
        }

    def graph_spec(self) -> dict:
        if "file" in self.graph:
            with open(self.graph["file"]) as fh:
                return json.load(fh)
        return self.graph

    def mesh_params(self) -> dict:
        m = {"h": 0.1, "L_trunc": 20.0, "far_end": "dirichlet", "mass": "lumped"}
        m.update(self.mesh)
        return m

    def solver_config(self, **overrides) -> SolverConfig:
        s = dict(self.solver)
        s.update(overrides)
        trunc = s.pop("truncation", None)
        if isinstance(trunc, Mapping):
            t = dict(trunc)
            trunc = Truncation(
                t.get("kind", "none"),
                _number(t.get("R", math.inf)),
                _number(t.get("r", 4.0)),
                _number(t.get("p", 4.0)),
            )
        if trunc is not None:
            s["truncation"] = trunc
        if "pair" in s:
            s["pair"] = tuple(_number(x) for x in s["pair"])
        s.setdefault("seed", self.seed)
        try:
            return SolverConfig(**s)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid solver settings: {exc}") from None

    def with_overrides(self, seed: int | None = None, trials: int | None = None) -> ExperimentConfig:
        d = copy.deepcopy(self.as_dict())
        if seed is not None:
            d["seed"] = seed
        if trials is not None:
            d["trials"] = trials
        return ExperimentConfig(**d)


def load_config(source: str | Path | Mapping[str, Any]) -> ExperimentConfig:
    """Config from a JSON file or an already parsed mapping.

    Relative graph file references are resolved against the config file's
    directory.
    """
    base = None
    if isinstance(source, Mapping):
        data = copy.deepcopy(dict(source))
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {str(path)!r} does not exist")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        base = path.parent
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    graph = data.get("graph")
    if base is not None and isinstance(graph, dict) and "file" in graph:
        graph["file"] = str((base / graph["file"]).resolve())
    try:
        jsonschema.validate(data, schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {exc.message}") from None
    return ExperimentConfig(**data)
