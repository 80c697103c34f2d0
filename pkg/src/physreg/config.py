"""Experiment configuration files.

One experiment per file, INI syntax::

    [experiment]
    name = table1_linear_bernoulli
    methods = rr, pilr
    seeds = 10              ; a count (0..9) or an explicit list "3, 5, 8"
    n = 20                  ; one value or a list (sweep axis)
    n_test = 200            ; fresh noiseless test points (optional)
    noise_var = 0.01
    split = 0.6, 0.2, 0.2
    output = results/table1_linear_bernoulli.csv
    timing = true           ; false writes wall_ms = 0 (byte-stable output)

    [equation]
    kind = bernoulli        ; oscillator | diffusion | bernoulli | fdm_diffusion
    P = 1.0
    Q = 0.0
    rho = 0
    T = 1.0
    h = 0.01

    [basis]
    family = grid1d         ; fourier1d | diffusion | grid1d | grid2d
    ; fourier1d: d_t (list = sweep axis), omit_fundamental
    ; diffusion: d_x (list = sweep axis), d_t

    [trials]
    kind = grid             ; dirac | weak_ho | weak_diffusion | grid
    ; dirac: K, seed        weak_ho: K_t, nodes
    ; weak_diffusion: K_t, K_x, nodes_x, nodes_t
    subsample = 90, 80, 60  ; keep the first k pairs (sweep axis, optional)

    [search]
    budget = 100
    low = 1e-9
    high = 1e-2

    [optimizer]
    lr = 0.01
    epochs = 2000
    decay = 0.999
    patience = 100

    [variety]
    samples = 10
    tol = 1e-8

Extents (``T``, ``xi``) and grid steps are read from ``[equation]`` and shared
with the basis.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .errors import ConfigError
from .operators import (
    Const,
    ContinuousDiffusion,
    EulerBernoulli,
    FdmDiffusion,
    HarmonicOscillator,
    Saturating,
)
from .solvers import OptimizerConfig

EQUATION_KINDS = ("oscillator", "diffusion", "bernoulli", "fdm_diffusion")


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _ints(text):
    out = []
    for v in text.replace(";", ",").split(","):
        v = v.strip()
        if v:
            f = float(v)
            if f != int(f):
                raise ValueError(f"{v!r} is not an integer")
            out.append(int(f))
    return out


@dataclass
class ExperimentConfig:
    name: str
    equation: dict
    basis: dict
    trials: dict
    n: list
    seeds: list
    methods: list = field(default_factory=lambda: ["rr", "pilr"])
    noise_var: float = 0.01
    split: tuple = (0.6, 0.2, 0.2)
    n_test: int | None = None
    budget: int = 100
    low: float = 1e-9
    high: float = 1e-2
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    samples: int = 10
    tol: float = 1e-8
    output: str | None = None
    timing: bool = True
    source: str = ""

    def operator(self):
        eq = self.equation
        kind = eq["kind"]
        if kind == "oscillator":
            return HarmonicOscillator(eq.get("k_s", 1.0), eq.get("m_s", 1.0))
        if kind == "diffusion":
            return ContinuousDiffusion(eq.get("c", 1.0))
        if kind == "bernoulli":
            return EulerBernoulli(eq.get("P", 1.0), eq.get("Q", 0.0), int(eq.get("rho", 0)), eq["h"])
        if kind == "fdm_diffusion":
            coef = Saturating(eq.get("a", 0.1)) if eq.get("coef", "const") == "saturating" else Const(eq.get("c", 1.0))
            return FdmDiffusion(eq["h_t"], eq["h_x"], coef)
        raise ConfigError(f"[equation] kind: unknown equation {kind!r}")

    @property
    def extents(self):
        eq = self.equation
        default_T = 2 * math.pi if eq["kind"] in ("oscillator", "diffusion") else 1.0
        default_xi = math.pi if eq["kind"] == "diffusion" else 1.0
        return eq.get("T", default_T), eq.get("xi", default_xi)


_EQ_KEYS = {
    "oscillator": {"k_s", "m_s", "T"},
    "diffusion": {"c", "xi", "T", "j_max"},
    "bernoulli": {"P", "Q", "rho", "T", "h"},
    "fdm_diffusion": {"coef", "c", "a", "xi", "T", "h_t", "h_x", "j_max"},
}
_REQUIRED = {"bernoulli": {"h"}, "fdm_diffusion": {"h_t", "h_x"}}
_BASIS_FOR = {
    "oscillator": "fourier1d",
    "diffusion": "diffusion",
    "bernoulli": "grid1d",
    "fdm_diffusion": "grid2d",
}


def _section(cp, name, required=True):
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing section [{name}]")
        return {}
    return dict(cp.items(name))


def _convert(section, key, raw, conv):
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _bool(raw):
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def parse_config(text, source="<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keys are case sensitive (P, Q, T)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    exp = _section(cp, "experiment")
    if "name" not in exp:
        raise ConfigError("[experiment] name is required")

    eq_raw = _section(cp, "equation")
    kind = eq_raw.pop("kind", None)
    if kind not in EQUATION_KINDS:
        raise ConfigError(f"[equation] kind must be one of {EQUATION_KINDS}, got {kind!r}")
    unknown = set(eq_raw) - _EQ_KEYS[kind]
    if unknown:
        raise ConfigError(f"[equation] unknown key(s) for {kind}: {sorted(unknown)}")
    missing = _REQUIRED.get(kind, set()) - set(eq_raw)
    if missing:
        raise ConfigError(f"[equation] missing key(s) for {kind}: {sorted(missing)}")
    equation = {"kind": kind}
    for key, raw in eq_raw.items():
        if key == "coef":
            if raw not in ("const", "saturating"):
                raise ConfigError(f"[equation] coef must be const or saturating, got {raw!r}")
            equation[key] = raw
        elif key in ("rho", "j_max"):
            equation[key] = _convert("equation", key, raw, int)
        else:
            equation[key] = _convert("equation", key, raw, float)

    basis_raw = _section(cp, "basis", required=False)
    family = basis_raw.pop("family", _BASIS_FOR[kind])
    if family != _BASIS_FOR[kind]:
        raise ConfigError(f"[basis] family {family!r} does not match equation {kind!r} (expected {_BASIS_FOR[kind]})")
    basis = {"family": family}
    for key, raw in basis_raw.items():
        if key in ("d_t", "d_x"):
            basis[key] = _convert("basis", key, raw, _ints)
            if not basis[key] or min(basis[key]) < 1:
                raise ConfigError(f"[basis] {key} values must be >= 1")
        elif key == "omit_fundamental":
            basis[key] = _convert("basis", key, raw, _bool)
        else:
            raise ConfigError(f"[basis] unknown key {key!r}")
    if family == "fourier1d" and "d_t" not in basis:
        raise ConfigError("[basis] d_t is required for fourier1d")
    if family == "diffusion" and not {"d_t", "d_x"} <= set(basis):
        raise ConfigError("[basis] d_x and d_t are required for the diffusion basis")

    tr_raw = _section(cp, "trials", required=False)
    tkind = tr_raw.pop("kind", "grid" if family.startswith("grid") else "dirac")
    trials = {"kind": tkind}
    int_keys = {"K", "seed", "K_t", "K_x", "nodes", "nodes_x", "nodes_t"}
    for key, raw in tr_raw.items():
        if key == "subsample":
            trials[key] = _convert("trials", key, raw, _ints)
        elif key in int_keys:
            trials[key] = _convert("trials", key, raw, int)
        else:
            raise ConfigError(f"[trials] unknown key {key!r}")
    if tkind not in ("dirac", "weak_ho", "weak_diffusion", "grid"):
        raise ConfigError(f"[trials] unknown kind {tkind!r}")
    if (tkind == "grid") != family.startswith("grid"):
        raise ConfigError("[trials] grid trials go with grid bases (and only with them)")

    n = _convert("experiment", "n", exp.get("n", "20"), _ints)
    if not n or min(n) < 3:
        raise ConfigError("[experiment] n values must be >= 3")
    seeds_raw = exp.get("seeds", "10")
    seeds = _convert("experiment", "seeds", seeds_raw, _ints)
    if "," not in seeds_raw and len(seeds) == 1:
        seeds = list(range(seeds[0]))
    if not seeds:
        raise ConfigError("[experiment] seeds is empty")
    methods = [m.strip() for m in exp.get("methods", "rr, pilr").split(",") if m.strip()]
    if not methods or set(methods) - {"rr", "pilr"}:
        raise ConfigError(f"[experiment] methods must be drawn from rr, pilr; got {methods}")
    split = tuple(_convert("experiment", "split", exp.get("split", "0.6, 0.2, 0.2"), _floats))
    if len(split) != 3 or abs(sum(split) - 1) > 1e-9:
        raise ConfigError("[experiment] split must be three fractions summing to 1")

    search = _section(cp, "search", required=False)
    budget = _convert("search", "budget", search.get("budget", "100"), int)
    low = _convert("search", "low", search.get("low", "1e-9"), float)
    high = _convert("search", "high", search.get("high", "1e-2"), float)
    if budget < 1:
        raise ConfigError("[search] budget must be >= 1")
    if not 0 < low < high:
        raise ConfigError("[search] bounds must satisfy 0 < low < high")

    opt_raw = _section(cp, "optimizer", required=False)
    try:
        opt = OptimizerConfig(
            lr=float(opt_raw.get("lr", 1e-2)),
            epochs=int(opt_raw.get("epochs", 2000)),
            decay=float(opt_raw.get("decay", 0.999)),
            patience=int(opt_raw.get("patience", 100)),
        )
    except ValueError as exc:
        raise ConfigError(f"[optimizer] {exc}") from None

    var = _section(cp, "variety", required=False)
    known = {"name", "methods", "seeds", "n", "n_test", "noise_var", "split", "output", "timing"}
    unknown = set(exp) - known
    if unknown:
        raise ConfigError(f"[experiment] unknown key(s): {sorted(unknown)}")

    n_test = exp.get("n_test")
    return ExperimentConfig(
        name=exp["name"],
        equation=equation,
        basis=basis,
        trials=trials,
        n=n,
        seeds=seeds,
        methods=methods,
        noise_var=_convert("experiment", "noise_var", exp.get("noise_var", "0.01"), float),
        split=split,
        n_test=None if n_test is None else _convert("experiment", "n_test", n_test, int),
        budget=budget,
        low=low,
        high=high,
        optimizer=opt,
        samples=_convert("variety", "samples", var.get("samples", "10"), int),
        tol=_convert("variety", "tol", var.get("tol", "1e-8"), float),
        output=exp.get("output"),
        timing=_convert("experiment", "timing", exp.get("timing", "true"), _bool),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, source=str(path))
