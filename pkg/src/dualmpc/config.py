"""Pipeline configuration: one YAML (or JSON) file per experiment."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from dualmpc.polytope import HPolytope


class ConfigError(ValueError):
    pass


DEFAULT_NUMERICS = {
    "dare_tol": 1e-9,
    "dare_max_iter": 100_000,
    "admissible_max_iter": 200,
    "qp_tol": 1e-8,
    "boundary_tol": 1e-9,
    "fm_row_cap": 20_000,
}


@dataclass(frozen=True, eq=False)
class PipelineConfig:
    A: np.ndarray
    B: np.ndarray
    X: HPolytope
    U: HPolytope
    Q: np.ndarray
    R: np.ndarray
    N: int
    P: np.ndarray | None
    sample_n: int
    sample_seed: int
    hidden: tuple
    learning_rate: float
    epochs: int
    nn_seed: int
    validation_fraction: float
    standardize_inputs: bool
    s: float
    eps: float
    T: int
    initial_states: object
    horizons: tuple
    fuzz_runs: int
    numerics: dict
    output: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nu(self) -> int:
        return self.B.shape[1]

    @property
    def layer_sizes(self):
        return [self.nx, *self.hidden, self.nu]

    def fingerprint(self, stage: str) -> str:
        """Hash of the configuration that determines the artifacts of `stage`."""
        r = self.raw
        parts = {
            "synthesize": [r.get("system"), r.get("constraints"), r.get("mpc"), r.get("governor"),
                           self.numerics],
        }
        parts["sample"] = [parts["synthesize"], {"n": self.sample_n, "seed": self.sample_seed}]
        parts["train"] = [parts["sample"], {"hidden": list(self.hidden), "lr": self.learning_rate,
                                            "epochs": self.epochs, "seed": self.nn_seed,
                                            "val": self.validation_fraction,
                                            "std": self.standardize_inputs}]
        blob = json.dumps(parts[stage], sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _matrix(value, path, rows=None, cols=None):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{path}': expected a numeric nested array") from None
    if M.ndim == 1 and cols == 1:
        M = M.reshape(-1, 1)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ConfigError(f"field '{path}': expected a matrix, got {M.ndim} dimensions")
    if (rows is not None and M.shape[0] != rows) or (cols is not None and M.shape[1] != cols):
        raise ConfigError(f"field '{path}': expected shape ({rows}, {cols}), got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ConfigError(f"field '{path}': non-finite entries")
    return M


def _polytope(value, path, dim):
    if not isinstance(value, dict):
        raise ConfigError(f"field '{path}': expected a mapping with lower/upper or H/h")
    if "lower" in value or "upper" in value:
        try:
            lo = np.array(value["lower"], dtype=float).ravel()
            hi = np.array(value["upper"], dtype=float).ravel()
        except KeyError as exc:
            raise ConfigError(f"field '{path}.{exc.args[0]}' is missing") from None
        if lo.size != dim or hi.size != dim:
            raise ConfigError(f"field '{path}': box bounds need {dim} entries")
        if np.any(lo > hi):
            raise ConfigError(f"field '{path}': lower bound exceeds upper bound")
        return HPolytope.from_box(lo, hi)
    if "H" in value and "h" in value:
        H = _matrix(value["H"], f"{path}.H", cols=dim)
        h = np.array(value["h"], dtype=float).ravel()
        if h.size != H.shape[0]:
            raise ConfigError(f"field '{path}.h': expected {H.shape[0]} entries")
        return HPolytope(H, h)
    raise ConfigError(f"field '{path}': give either lower/upper or H/h")


def _get(d, key, path, default=None, required=False):
    if not isinstance(d, dict):
        raise ConfigError(f"field '{path}': expected a mapping")
    if key not in d:
        if required:
            raise ConfigError(f"field '{path}.{key}' is missing" if path else f"field '{key}' is missing")
        return default
    return d[key]


def _number(value, path, kind=float, lo=None, strict=False):
    if isinstance(value, bool) or (kind is int and isinstance(value, float) and not value.is_integer()):
        raise ConfigError(f"field '{path}': expected {kind.__name__}")
    try:
        v = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{path}': expected {kind.__name__}") from None
    if kind is float and not np.isfinite(v):
        raise ConfigError(f"field '{path}': must be finite")
    if lo is not None and (v < lo or (strict and v == lo)):
        raise ConfigError(f"field '{path}': must be {'>' if strict else '>='} {lo}")
    return v


def parse_config(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping")
    system = _get(data, "system", "", required=True)
    A = _matrix(_get(system, "A", "system", required=True), "system.A")
    m = A.shape[0]
    if A.shape[1] != m:
        raise ConfigError(f"field 'system.A': must be square, got {A.shape}")
    B = _matrix(_get(system, "B", "system", required=True), "system.B", rows=m,
                cols=None)
    n = B.shape[1]

    cons = _get(data, "constraints", "", required=True)
    X = _polytope(_get(cons, "X", "constraints", required=True), "constraints.X", m)
    U = _polytope(_get(cons, "U", "constraints", required=True), "constraints.U", n)

    mpc = _get(data, "mpc", "", required=True)
    Q = _matrix(_get(mpc, "Q", "mpc", required=True), "mpc.Q", m, m)
    R = _matrix(_get(mpc, "R", "mpc", required=True), "mpc.R", n, n)
    N = _number(_get(mpc, "N", "mpc", required=True), "mpc.N", int, lo=1)
    P = _get(mpc, "P", "mpc")
    P = None if P is None else _matrix(P, "mpc.P", m, m)

    sample = _get(data, "sample", "", default={}) or {}
    nn = _get(data, "nn", "", default={}) or {}
    gov = _get(data, "governor", "", default={}) or {}
    sim = _get(data, "simulate", "", default={}) or {}
    region = _get(data, "region", "", default={}) or {}
    numerics = dict(DEFAULT_NUMERICS)
    for k, v in (_get(data, "numerics", "", default={}) or {}).items():
        if k not in DEFAULT_NUMERICS:
            raise ConfigError(f"field 'numerics.{k}': unknown setting")
        numerics[k] = _number(v, f"numerics.{k}", type(DEFAULT_NUMERICS[k]), lo=0, strict=True)

    hidden = _get(nn, "hidden", "nn", default=[20, 20, 20])
    if not isinstance(hidden, list) or not hidden:
        raise ConfigError("field 'nn.hidden': expected a nonempty list of widths")
    hidden = tuple(_number(w, "nn.hidden", int, lo=1) for w in hidden)

    eps = _number(_get(gov, "eps", "governor", default=1e-6), "governor.eps", lo=0, strict=True)
    if eps >= 1:
        raise ConfigError("field 'governor.eps': must be < 1")
    vf = _number(_get(nn, "validation_fraction", "nn", default=0.2), "nn.validation_fraction", lo=0)
    if vf >= 1:
        raise ConfigError("field 'nn.validation_fraction': must be < 1")

    init = _get(sim, "initial_states", "simulate", default="vertices")
    if init != "vertices":
        init = _matrix(init, "simulate.initial_states", cols=m)

    horizons = _get(region, "horizons", "region", default=[1, 3, 10])
    horizons = tuple(_number(h, "region.horizons", int, lo=0) for h in horizons)

    out = str(_get(data, "output", "", default="out"))

    return PipelineConfig(
        A=A, B=B, X=X, U=U, Q=Q, R=R, N=N, P=P,
        sample_n=_number(_get(sample, "n", "sample", default=100), "sample.n", int, lo=1),
        sample_seed=_number(_get(sample, "seed", "sample", default=0), "sample.seed", int, lo=0),
        hidden=hidden,
        learning_rate=_number(_get(nn, "learning_rate", "nn", default=1e-3), "nn.learning_rate",
                              lo=0, strict=True),
        epochs=_number(_get(nn, "epochs", "nn", default=1000), "nn.epochs", int, lo=0),
        nn_seed=_number(_get(nn, "seed", "nn", default=0), "nn.seed", int, lo=0),
        validation_fraction=vf,
        standardize_inputs=bool(_get(nn, "standardize_inputs", "nn", default=False)),
        s=_number(_get(gov, "s", "governor", default=1.0), "governor.s", lo=0, strict=True),
        eps=eps,
        T=_number(_get(sim, "T", "simulate", default=50), "simulate.T", int, lo=1),
        initial_states=init,
        horizons=horizons,
        fuzz_runs=_number(_get(sim, "fuzz_runs", "simulate", default=100), "simulate.fuzz_runs",
                          int, lo=0),
        numerics=numerics,
        output=out,
        raw=data,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: {where}: {exc.problem}") from None
    return parse_config(data)
