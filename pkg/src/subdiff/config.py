"""JSON problem configuration: parsing, validation and the resolved echo.

A config is one JSON object.  Every section is optional and falls back to
:data:`DEFAULTS`; unknown keys are rejected so typos surface as errors.
Validation failures raise :class:`ConfigError` carrying the dotted path of
the offending field.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .adjoint import ControlProblem, OptimOptions
from .control import AdmissibleSet, ControlOperator, ControlSignal, CostSpec
from .forward import ConfigurationError, Nonlinearity, PicardOptions, ProblemIndices
from .fracops import GradedTimeGrid
from .spectral import KINDS, EigenBasis, OperatorSpec, SpectralField, analyze, build_basis, default_grid

DEFAULTS: dict = {
    "operator": {"kind": "neumann_laplacian_1d", "domain_length": math.pi, "shift": 1.0,
                 "s": 1.0, "robin": [1.0, 1.0], "delta": 0},
    "indices": {"gamma": 0.6, "alpha": 0.0, "alpha_tilde": 0.0, "beta": 0.0, "q": "inf", "rho": 0.75},
    "nonlinearity": {"kind": "none"},
    "control": {"kind": "interior_identity", "initial": {"kind": "zero"}},
    "grids": {"n_modes": 8, "n_space": None, "n_steps": 64, "grading": 2.0, "T": 1.0},
    "initial": {"kind": "single_mode", "mode": 1, "amplitude": 1.0},
    "cost": {"a1": 1.0, "a2": 0.0, "zeta": 1e-3,
             "z_Q": {"kind": "zero"}, "z_Sigma": {"kind": "zero"}},
    "admissible": {"enabled": False, "z_a": "-inf", "z_b": "inf", "M": "inf", "mollify": False},
    "solver": {"picard_tol": 1e-10, "picard_max_iter": 60, "contraction_limit": 0.5,
               "max_halvings": 40, "blowup_threshold": 1e8, "adjoint_scheme": "discrete"},
    "optimizer": {"max_outer_iters": 200, "step0": 1.0, "shrink": 0.5, "armijo_c": 1e-4,
                  "grad_tol": 1e-10, "vi_tol": 1e-6, "max_shrinks": 40, "bb_step": True},
    "gradcheck": {"eps": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7]},
    "seed": 0,
    "threads": 0,
}

TIME_PROFILES = ("constant", "linear", "sine")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the bad field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path
        self.msg = msg


# --------------------------------------------------------------------------
# small parsing helpers
# --------------------------------------------------------------------------

def _merge(base: dict, over: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        p = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(p, "unknown field")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in _FREEFORM:
            out[k] = _merge(base[k], v, p)
        else:
            out[k] = v
    return out


# sections whose keys depend on a "kind" discriminator
_FREEFORM = {"nonlinearity", "initial", "z_Q", "z_Sigma"}


def _num(v, path: str, allow_inf: bool = False) -> float:
    if isinstance(v, str) and allow_inf and v.strip().lower() in ("inf", "+inf", "-inf"):
        return -math.inf if v.strip().startswith("-") else math.inf
    if v is None and allow_inf:
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    x = float(v)
    if math.isnan(x) or (math.isinf(x) and not allow_inf):
        raise ConfigError(path, "must be finite")
    return x


def _int(v, path: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path, f"must be >= {lo}")
    return v


def _bool(v, path: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _wrap(path: str, fn, *args, **kwargs):
    """Run a constructor and re-raise its validation error at ``path``."""
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    return x


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, round-trip floats, infinities as strings."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# the parsed configuration
# --------------------------------------------------------------------------

@dataclass(eq=False)
class ProblemConfig:
    doc: dict  # merged document, defaults filled in
    spec: OperatorSpec
    basis: EigenBasis
    idx: ProblemIndices
    nl: Nonlinearity | None
    B: ControlOperator
    grid: GradedTimeGrid
    u0: SpectralField
    z0: ControlSignal
    cost: CostSpec
    aset: AdmissibleSet
    picard: PicardOptions
    optim: OptimOptions
    adjoint_scheme: str
    gradcheck_eps: tuple
    seed: int
    threads: int

    def problem(self) -> ControlProblem:
        return ControlProblem(self.basis, self.idx, self.nl, self.B, self.u0, self.grid,
                              self.picard, self.adjoint_scheme)

    def resolved(self) -> dict:
        d = copy.deepcopy(self.doc)
        d["derived"] = {"theta": self.idx.theta, "xi": self.idx.xi, "sigma": self.idx.sigma,
                        "n_space_nodes": self.basis.grid.n_interior,
                        "eigenvalues": self.basis.eigenvalues.tolist()}
        return d


def _profile(kind: str, t: np.ndarray, path: str) -> np.ndarray:
    if kind == "constant":
        return np.ones_like(t)
    if kind == "linear":
        return t / t[-1]
    if kind == "sine":
        return np.sin(math.pi * t / t[-1])
    raise ConfigError(path, f"time profile must be one of {TIME_PROFILES}")


def _interior_target(sec: dict, path: str, basis: EigenBasis, t: np.ndarray) -> np.ndarray | None:
    kind = sec.get("kind")
    if kind == "zero":
        return None
    if kind == "separable":
        _only(sec, ("kind", "time", "mode", "amplitude", "offset"), path)
        mode = _int(sec.get("mode", 1), path + ".mode", 1)
        if mode > basis.n_modes:
            raise ConfigError(path + ".mode", f"basis has only {basis.n_modes} modes")
        amp = _num(sec.get("amplitude", 1.0), path + ".amplitude")
        off = _num(sec.get("offset", 0.0), path + ".offset")
        tau = _profile(sec.get("time", "constant"), t, path + ".time")
        shape = off + amp * basis.interior_values[:, mode - 1]
        return np.outer(tau, shape)
    raise ConfigError(path + ".kind", "expected 'zero' or 'separable'")


def _boundary_target(sec: dict, path: str, t: np.ndarray) -> np.ndarray | None:
    kind = sec.get("kind")
    if kind == "zero":
        return None
    if kind == "separable":
        _only(sec, ("kind", "time", "values"), path)
        vals = sec.get("values", [1.0, 1.0])
        if not isinstance(vals, list) or len(vals) != 2:
            raise ConfigError(path + ".values", "expected two endpoint values")
        v = np.array([_num(x, f"{path}.values[{i}]") for i, x in enumerate(vals)])
        return np.outer(_profile(sec.get("time", "constant"), t, path + ".time"), v)
    raise ConfigError(path + ".kind", "expected 'zero' or 'separable'")


def _only(sec: dict, keys, path: str):
    for k in sec:
        if k not in keys:
            raise ConfigError(f"{path}.{k}", "unknown field")


def _nonlinearity(sec: dict, path: str) -> Nonlinearity | None:
    kind = sec.get("kind", "none")
    if kind == "none":
        _only(sec, ("kind",), path)
        return None
    if kind == "allen_cahn":
        _only(sec, ("kind", "c1", "c2"), path)
        return _wrap(path, Nonlinearity.allen_cahn, _num(sec.get("c1", 1.0), path + ".c1"),
                     _num(sec.get("c2", 2.0), path + ".c2"))
    if kind == "fisher_kpp":
        _only(sec, ("kind", "r", "K"), path)
        return _wrap(path, Nonlinearity.fisher_kpp, _num(sec.get("r", 1.0), path + ".r"),
                     _num(sec.get("K", 1.0), path + ".K"))
    if kind == "polynomial":
        _only(sec, ("kind", "coefficients"), path)
        co = sec.get("coefficients")
        if not isinstance(co, list) or not co:
            raise ConfigError(path + ".coefficients", "expected a nonempty list")
        return _wrap(path + ".coefficients", Nonlinearity.polynomial,
                     [_num(c, f"{path}.coefficients[{i}]") for i, c in enumerate(co)])
    if kind == "nonlocal_burgers":
        _only(sec, ("kind", "amplitude", "width"), path)
        return _wrap(path, Nonlinearity.nonlocal_burgers, _num(sec.get("amplitude", 1.0), path + ".amplitude"),
                     _num(sec.get("width", 0.3), path + ".width"))
    raise ConfigError(path + ".kind", f"unknown nonlinearity {kind!r}")


def _initial(sec: dict, path: str, basis: EigenBasis, seed: int) -> SpectralField:
    kind = sec.get("kind")
    N = basis.n_modes
    if kind == "zero":
        c = np.zeros(N)
    elif kind == "single_mode":
        _only(sec, ("kind", "mode", "amplitude"), path)
        mode = _int(sec.get("mode", 1), path + ".mode", 1)
        if mode > N:
            raise ConfigError(path + ".mode", f"basis has only {N} modes")
        c = np.zeros(N)
        c[mode - 1] = _num(sec.get("amplitude", 1.0), path + ".amplitude")
    elif kind == "coefficients":
        _only(sec, ("kind", "values"), path)
        vals = sec.get("values")
        if not isinstance(vals, list) or len(vals) > N:
            raise ConfigError(path + ".values", f"expected a list of at most {N} numbers")
        c = np.zeros(N)
        c[: len(vals)] = [_num(v, f"{path}.values[{i}]") for i, v in enumerate(vals)]
    elif kind == "bump":
        # amplitude * 4 x (L - x) / L^2, projected on the basis
        _only(sec, ("kind", "amplitude"), path)
        amp = _num(sec.get("amplitude", 1.0), path + ".amplitude")
        L = basis.grid.length
        x = basis.grid.nodes
        vals = amp * 4 * x * (L - x) / L**2
        if basis.grid.has_boundary:
            vals = np.concatenate([vals, [0.0, 0.0]])
        return analyze(vals, basis)
    elif kind == "random":
        _only(sec, ("kind", "amplitude"), path)
        amp = _num(sec.get("amplitude", 1.0), path + ".amplitude")
        rng = np.random.default_rng(seed)
        c = amp * rng.standard_normal(N) / (1.0 + np.arange(N)) ** 2
    else:
        raise ConfigError(path + ".kind", "expected zero, single_mode, coefficients, bump or random")
    return SpectralField(c, basis)


def _control_signal(sec: dict, path: str, grid, m: int) -> ControlSignal:
    kind = sec.get("kind")
    if kind == "zero":
        return ControlSignal.zeros(grid, m)
    if kind == "constant":
        _only(sec, ("kind", "value"), path)
        return ControlSignal(grid, np.full((grid.nodes.size, m), _num(sec.get("value", 0.0), path + ".value")))
    if kind == "csv":
        _only(sec, ("kind", "path"), path)
        try:
            z = ControlSignal.from_csv(Path(sec["path"]).read_text())
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(path + ".path", f"cannot read control CSV: {exc}") from None
        if not z.grid.same_as(grid) or z.values.shape[1] != m:
            raise ConfigError(path + ".path", "control CSV does not match the time/control grids")
        return z
    raise ConfigError(path + ".kind", "expected zero, constant or csv")


def parse_config(doc: dict) -> ProblemConfig:
    """Validate a config document and build the problem objects."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "a config must be a JSON object")
    d = _merge(DEFAULTS, doc, "")

    op = d["operator"]
    if op["kind"] not in KINDS:
        raise ConfigError("operator.kind", f"expected one of {KINDS}")
    robin = op["robin"]
    if not isinstance(robin, list) or len(robin) != 2:
        raise ConfigError("operator.robin", "expected two coefficients")
    spec = _wrap("operator", OperatorSpec, op["kind"], _num(op["domain_length"], "operator.domain_length"),
                 _num(op["shift"], "operator.shift"), _num(op["s"], "operator.s"),
                 tuple(_num(b, f"operator.robin[{i}]") for i, b in enumerate(robin)),
                 _int(op["delta"], "operator.delta"))

    ix = d["indices"]
    try:
        idx = ProblemIndices(_num(ix["gamma"], "indices.gamma"), _num(ix["alpha"], "indices.alpha"),
                             _num(ix["alpha_tilde"], "indices.alpha_tilde"), _num(ix["beta"], "indices.beta"),
                             _num(ix["q"], "indices.q", allow_inf=True), _num(ix["rho"], "indices.rho"))
    except ConfigurationError as exc:
        raise ConfigError("indices", str(exc)) from None
    if idx.gamma >= 1.0:
        raise ConfigError("indices.gamma", "the fractional order must lie in (0, 1)")

    gr = d["grids"]
    n_modes = _int(gr["n_modes"], "grids.n_modes", 1)
    n_space = None if gr["n_space"] is None else _int(gr["n_space"], "grids.n_space", 1)
    pgrid = _wrap("grids.n_space", default_grid, spec, n_modes, n_space)
    basis = _wrap("grids", build_basis, spec, n_modes, pgrid)
    grid = _wrap("grids", GradedTimeGrid, _num(gr["T"], "grids.T"), _int(gr["n_steps"], "grids.n_steps", 2),
                 _num(gr["grading"], "grids.grading"))

    nl = _nonlinearity(d["nonlinearity"], "nonlinearity")
    if nl is not None and not nl.is_local and spec.has_boundary_measure:
        raise ConfigError("nonlinearity.kind", "the nonlocal term is not supported on Wentzell bases")

    ct = d["control"]
    if ct["kind"] == "boundary_injection" and not spec.has_boundary_measure:
        raise ConfigError("control.kind", "boundary_injection needs operator.kind = wentzell_robin_1d")
    B = _wrap("control.kind", ControlOperator, ct["kind"], basis, idx.alpha_tilde)

    seed = _int(d["seed"], "seed", 0)
    u0 = _initial(d["initial"], "initial", basis, seed)
    z0 = _control_signal(ct["initial"], "control.initial", grid, B.n_control)

    c = d["cost"]
    a2 = _num(c["a2"], "cost.a2")
    if a2 > 0 and not spec.has_boundary_measure:
        raise ConfigError("cost.a2", "boundary tracking needs a basis with boundary traces (wentzell_robin_1d)")
    t = grid.nodes
    cost = _wrap("cost", CostSpec, _num(c["a1"], "cost.a1"), a2, _num(c["zeta"], "cost.zeta"),
                 _interior_target(c["z_Q"], "cost.z_Q", basis, t), _boundary_target(c["z_Sigma"], "cost.z_Sigma", t))

    ad = d["admissible"]
    if _bool(ad["enabled"], "admissible.enabled"):
        M = _num(ad["M"], "admissible.M", allow_inf=True)
        if not M > 0:
            raise ConfigError("admissible.M", "the admissible set requires M > 0")
        if not idx.rho > 0.5:
            raise ConfigError("indices.rho", f"the admissible set requires rho > 1/2 (and M > 0); got rho={idx.rho}")
        aset = _wrap("admissible", AdmissibleSet, _num(ad["z_a"], "admissible.z_a", allow_inf=True),
                     _num(ad["z_b"], "admissible.z_b", allow_inf=True), M, idx.rho,
                     _bool(ad["mollify"], "admissible.mollify"))
    else:
        aset = AdmissibleSet()

    s = d["solver"]
    picard = _wrap("solver", PicardOptions, _num(s["picard_tol"], "solver.picard_tol"),
                   _int(s["picard_max_iter"], "solver.picard_max_iter", 1),
                   _num(s["contraction_limit"], "solver.contraction_limit"),
                   _int(s["max_halvings"], "solver.max_halvings", 0),
                   _num(s["blowup_threshold"], "solver.blowup_threshold"))
    if s["adjoint_scheme"] not in ("discrete", "continuous"):
        raise ConfigError("solver.adjoint_scheme", "expected 'discrete' or 'continuous'")

    o = d["optimizer"]
    optim = _wrap("optimizer", OptimOptions, _int(o["max_outer_iters"], "optimizer.max_outer_iters", 0),
                  _num(o["step0"], "optimizer.step0"), _num(o["shrink"], "optimizer.shrink"),
                  _num(o["armijo_c"], "optimizer.armijo_c"), _num(o["grad_tol"], "optimizer.grad_tol"),
                  _num(o["vi_tol"], "optimizer.vi_tol"), _int(o["max_shrinks"], "optimizer.max_shrinks", 0),
                  _bool(o["bb_step"], "optimizer.bb_step"))

    eps = d["gradcheck"]["eps"]
    if not isinstance(eps, list) or not eps:
        raise ConfigError("gradcheck.eps", "expected a nonempty list")
    eps = tuple(_num(e, f"gradcheck.eps[{i}]") for i, e in enumerate(eps))
    if min(eps) <= 0:
        raise ConfigError("gradcheck.eps", "step sizes must be positive")

    return ProblemConfig(d, spec, basis, idx, nl, B, grid, u0, z0, cost, aset, picard, optim,
                         s["adjoint_scheme"], eps, seed, _int(d["threads"], "threads", 0))


def load_config(path: str | Path) -> ProblemConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)


def shipped_configs() -> dict[str, Path]:
    """Example configs bundled with the package, by stem."""
    root = resources.files("subdiff") / "configs"
    return {p.name[:-5]: Path(str(p)) for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".json")}
