"""Configuration-driven benchmark runs: search, fit, aggregate, report."""

from __future__ import annotations

import contextlib
import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import __version__
from .basis import make_basis, make_trials, uniform_points
from .datagen import approximation_error, generate_solution, make_dataset
from .errors import BlowUpError, PhysregError
from .residuals import ConstraintSystem, assemble_T
from .solvers import (
    RegressionProblem,
    _gram_penalty,
    adam_batch,
    fit_pilr_linear,
    fit_ridge,
    mse,
)
from .variety import DimReport, dim_linear, dim_sampled, sample_variety_points

log = logging.getLogger(__name__)

FIT_COLUMNS = [
    "experiment", "method", "seed", "d", "d_V", "n", "xi", "nu",
    "mse_train", "mse_val", "mse_test", "residual_norm", "epochs", "wall_ms",
    "aggregate", "stat", "status",
]
_AGG_FIELDS = ["mse_train", "mse_val", "mse_test", "residual_norm", "epochs", "wall_ms"]

SEARCH_NOTE = (
    "hyperparameters: seeded log-uniform random search over the configured box "
    "(reproducible stand-in for an adaptive tuner at the same budget)"
)


class SearchError(PhysregError):
    pass


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass
class SweepResult:
    xi: float
    nu: float
    report: object
    candidates: list  # (xi, nu, mse_val, diverged)


def draw_candidates(budget, seed, low=1e-9, high=1e-2):
    rng = np.random.default_rng(seed)
    lo, hi = math.log10(low), math.log10(high)
    return 10 ** rng.uniform(lo, hi, size=budget), 10 ** rng.uniform(lo, hi, size=budget)


def sweep_hyperparams(fit_many, budget, seed, low=1e-9, high=1e-2, search_nu=True) -> SweepResult:
    """Pick the candidate with the smallest validation MSE.

    ``fit_many(xis, nus)`` returns one FitReport per candidate.  Ties go to the
    smaller ``nu``, then the smaller ``xi``; diverged candidates never win.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    xis, nus = draw_candidates(budget, seed, low, high)
    if not search_nu:
        nus = np.zeros_like(nus)
    reports = fit_many(xis, nus)
    cands = []
    for x, v, rep in zip(xis, nus, reports):
        score = rep.mse_val if not rep.diverged and np.isfinite(rep.mse_val) else math.inf
        cands.append((float(x), float(v), score, rep.diverged))
    order = sorted(range(budget), key=lambda i: (cands[i][2], cands[i][1], cands[i][0]))
    best = order[0]
    if not np.isfinite(cands[best][2]):
        raise SearchError(f"all {budget} candidates diverged or produced non-finite validation MSE")
    return SweepResult(cands[best][0], cands[best][1], reports[best], cands)


# ---------------------------------------------------------------------------
# cells


@dataclass
class Cell:
    """One (basis size, n, trial subsample) configuration with its assembled physics."""

    label: str
    op: object
    basis: object
    trials: object
    cs: object
    T: object
    n: int
    dim: DimReport
    penalty: object = None


def _basis_sizes(cfg):
    b = cfg.basis
    fam = b["family"]
    T, xi = cfg.extents
    eq = cfg.equation
    if fam == "fourier1d":
        return [dict(family=fam, d_t=v, T=T, omit_fundamental=b.get("omit_fundamental", False)) for v in b["d_t"]]
    if fam == "diffusion":
        (d_t,) = b["d_t"][:1]
        return [dict(family=fam, d_x=v, d_t=d_t, xi=xi, T=T, c=eq.get("c", 1.0)) for v in b["d_x"]]
    if fam == "grid1d":
        return [dict(family=fam, T=T, h=eq["h"])]
    return [dict(family=fam, T=T, h_t=eq["h_t"], xi=xi, h_x=eq["h_x"])]


def _make_trial_set(cfg, basis):
    tr = cfg.trials
    T, xi = cfg.extents
    kind = tr["kind"]
    if kind == "grid":
        return make_trials("grid", basis=basis)
    if kind == "dirac":
        K = tr.get("K", 100)
        seed = tr.get("seed", 0)
        pool = uniform_points(basis, K, np.random.default_rng([seed, 1]))
        return make_trials("dirac", points=pool, K=K, seed=seed)
    if kind == "weak_ho":
        return make_trials("weak_ho", K_t=tr.get("K_t", basis.size), T=T, nodes=tr.get("nodes", 4096))
    return make_trials(
        "weak_diffusion", K_t=tr.get("K_t", 10), K_x=tr.get("K_x", 1), xi=xi, T=T,
        nodes=(tr.get("nodes_x", 256), tr.get("nodes_t", 256)),
    )


def _dimension(cfg, op, basis, cs):
    if cs.linear:
        return dim_linear(cs.D, cfg.tol)
    T, xi = cfg.extents
    pts = sample_variety_points(op, basis, cfg.samples, seed=0, T=T, xi=xi, j_max=cfg.equation.get("j_max", 1))
    return dim_sampled(cs, pts, cfg.tol)


def build_cells(cfg):
    op = cfg.operator()
    cells = []
    subs = cfg.trials.get("subsample") or [None]
    for bspec in _basis_sizes(cfg):
        bspec = dict(bspec)
        basis = make_basis(bspec.pop("family"), **bspec)
        full = _make_trial_set(cfg, basis)
        for keep in subs:
            trials = full if keep is None else full.head(keep)
            cs = ConstraintSystem.bind(op, basis, trials)
            dim = _dimension(cfg, op, basis, cs)
            T = assemble_T(trials) if cs.linear else None
            penalty = _gram_penalty(cs.D, T) if cs.linear and trials.K else None
            for n in cfg.n:
                label = f"d={basis.size} K={trials.K} n={n}"
                cells.append(Cell(label, op, basis, trials, cs, T, n, dim, penalty))
    return cells


# ---------------------------------------------------------------------------
# fitting one (cell, seed)


def _problem(ds, basis):
    Phi = basis.design(ds.x_train)
    return Phi, (basis.design(ds.x_val), ds.y_val), (basis.design(ds.x_test), ds.y_test)


def _fit_many_linear(cell, Phi, y, val, test, method):
    def fit_many(xis, nus):
        out = []
        for x, v in zip(xis, nus):
            prob = RegressionProblem(Phi, y, x, v, val=val, test=test)
            try:
                if method == "rr" or cell.penalty is None:
                    rep = fit_ridge(prob)
                else:
                    rep = fit_pilr_linear(prob, cell.cs.D, cell.T, penalty=cell.penalty)
            except PhysregError as exc:
                rep = _diverged(prob, method, str(exc))
            out.append(rep)
        return out

    return fit_many


def _diverged(prob, method, why):
    from .solvers import FitReport

    return FitReport(np.zeros(prob.d), math.nan, math.nan, math.nan, method=method, diverged=True,
                     xi=prob.xi, nu=prob.nu, extra={"error": why})


def _fit_many_soft(cell, Phi, y, val, test, opt):
    from .solvers import FitReport

    def fit_many(xis, nus):
        W, best, epochs, diverged = adam_batch(Phi, y, cell.cs, xis, nus, opt, val=val)
        reps = []
        for i, (x, v) in enumerate(zip(xis, nus)):
            w = W[:, i]
            reps.append(FitReport(
                w=w, mse_train=mse(Phi @ w, y), mse_val=float(best[i]), mse_test=mse(test[0] @ w, test[1]),
                epochs_run=int(epochs[i]), xi=float(x), nu=float(v), method="pilr", diverged=bool(diverged[i]),
            ))
        return reps

    return fit_many


def _seed_streams(seed):
    ic, data, search = np.random.SeedSequence(seed).spawn(3)
    return ic, data, search


def run_cell_seed(cfg, cell, seed):
    """All configured methods on one cell and seed; returns FIT_COLUMNS dicts."""
    T, xi = cfg.extents
    ic_ss, data_ss, search_ss = _seed_streams(seed)
    search_seed = int(search_ss.generate_state(1)[0])
    base = dict(experiment=cfg.name, seed=seed, d=cell.basis.size, d_V=cell.dim.d_V, n=cell.n,
                aggregate="false", stat="")
    try:
        gt = generate_solution(cell.op, np.random.default_rng(ic_ss), T=T, xi=xi, j_max=cfg.equation.get("j_max", 1))
        ds = make_dataset(gt, cell.n, cfg.noise_var, cfg.split, np.random.default_rng(data_ss), cfg.n_test)
    except (BlowUpError, PhysregError) as exc:
        return [dict(base, method=m, status=f"error: {exc}") for m in cfg.methods]
    Phi, val, test = _problem(ds, cell.basis)
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        if method == "pilr" and not cell.cs.linear:
            fit_many = _fit_many_soft(cell, Phi, ds.y_train, val, test, cfg.optimizer)
        else:
            fit_many = _fit_many_linear(cell, Phi, ds.y_train, val, test, method)
        try:
            res = sweep_hyperparams(fit_many, cfg.budget, search_seed, cfg.low, cfg.high, search_nu=method == "pilr")
        except PhysregError as exc:
            rows.append(dict(base, method=method, status=f"error: {exc}"))
            continue
        rep = res.report
        wall = int(round((time.perf_counter() - t0) * 1000)) if cfg.timing else 0
        resid = float(np.linalg.norm(cell.cs.residual(rep.w))) if cell.cs.K else 0.0
        rows.append(dict(
            base, method=method, xi=res.xi, nu=res.nu if method == "pilr" else 0.0,
            mse_train=rep.mse_train, mse_val=rep.mse_val, mse_test=rep.mse_test,
            residual_norm=resid, epochs=rep.epochs_run, wall_ms=wall, status="ok",
        ))
    return rows


# ---------------------------------------------------------------------------
# experiment


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    aggregates: list = field(default_factory=list)
    dims: list = field(default_factory=list)  # (label, DimReport)
    config: object = None
    version: str = __version__


def aggregate(rows):
    """Mean and population std per (method, d, d_V, n) over successful seeds."""
    groups = {}
    for r in rows:
        if r.get("status") != "ok":
            continue
        key = (r["experiment"], r["method"], r["d"], r["d_V"], r["n"])
        groups.setdefault(key, []).append(r)
    out = []
    for (exp, method, d, d_V, n), members in groups.items():
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            row = dict(experiment=exp, method=method, seed="", d=d, d_V=d_V, n=n, xi="", nu="",
                       aggregate="true", stat=stat, status=f"seeds={len(members)}")
            for f in _AGG_FIELDS:
                row[f] = float(fn([m[f] for m in members]))
            out.append(row)
    return out


def _tasks(cfg, cells):
    return [(ci, seed) for ci in range(len(cells)) for seed in cfg.seeds]


def _run_task(args):
    cfg, cell, seed = args
    return run_cell_seed(cfg, cell, seed)


def run_experiment(cfg, jobs=1, progress=None) -> BenchReport:
    """Every cell x seed x method; results are ordered by config, not completion."""
    cells = build_cells(cfg)
    report = BenchReport(config=cfg)
    seen = set()
    for cell in cells:
        key = (cell.basis.size, cell.trials.K)
        if key not in seen:
            seen.add(key)
            report.dims.append((f"{cfg.name} {cell.label.rsplit(' n=', 1)[0]}", cell.dim))
    tasks = _tasks(cfg, cells)
    payload = [(cfg, cells[ci], seed) for ci, seed in tasks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, payload))
    else:
        results = []
        for item in payload:
            results.append(_run_task(item))
            if progress:
                progress(item[1].label, item[2], results[-1])
    for rows in results:
        report.rows.extend(rows)
    report.aggregates = aggregate(report.rows)
    return report


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def emit_csv(report, path):
    """Per-seed rows then aggregate rows; header always written."""
    write_rows(list(report.rows) + list(report.aggregates), FIT_COLUMNS, path)


_INT_COLS = {"seed", "d", "d_V", "n", "epochs", "wall_ms"}
_FLOAT_COLS = {"xi", "nu", "mse_train", "mse_val", "mse_test", "residual_norm"}


def parse_csv(path):
    """Rows of an emitted CSV with numeric fields restored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in _INT_COLS:
                    row[k] = int(float(v)) if k not in ("epochs", "wall_ms") or "." not in v else float(v)
                elif k in _FLOAT_COLS:
                    row[k] = float(v)
                else:
                    row[k] = v
            rows.append(row)
    return rows


def summary_table(report):
    cfg = report.config
    lines = [
        f"# {cfg.name if cfg else 'experiment'}  (physreg {report.version})",
        f"# {SEARCH_NOTE}",
        "",
        f"{'method':<6} {'d':>6} {'d_V':>5} {'n':>5} {'test MSE (mean +- std)':>28} {'seeds':>6}",
    ]
    means = {(a["method"], a["d"], a["d_V"], a["n"]): a for a in report.aggregates if a["stat"] == "mean"}
    stds = {(a["method"], a["d"], a["d_V"], a["n"]): a for a in report.aggregates if a["stat"] == "std"}
    for key, m in means.items():
        s = stds[key]
        lines.append(
            f"{key[0]:<6} {key[1]:>6} {key[2]:>5} {key[3]:>5} "
            f"{m['mse_test']:>14.4g} +- {s['mse_test']:<10.3g} {m['status'].split('=')[1]:>6}"
        )
    failed = [r for r in report.rows if r.get("status") != "ok"]
    if failed:
        lines.append("")
        lines.append(f"{len(failed)} failed row(s):")
        lines.extend(f"  seed {r['seed']} {r['method']}: {r['status']}" for r in failed)
    return "\n".join(lines) + "\n"


def dim_reports(cfg):
    """DimReport per distinct (basis, trial set) in the config."""
    out, seen = [], set()
    for cell in build_cells(cfg):
        key = (cell.basis.size, cell.trials.K)
        if key in seen:
            continue
        seen.add(key)
        out.append((f"{cfg.name} {cell.label.rsplit(' n=', 1)[0]}", cell.dim))
    return out


SWEEP_COLUMNS = ["experiment", "method", "seed", "d", "n", "candidate", "xi", "nu", "mse_val", "diverged", "selected"]


def sweep_rows(cfg, cells=None):
    """Every search candidate for every cell, seed and method."""
    cells = cells or build_cells(cfg)
    T, xi = cfg.extents
    rows = []
    for cell, seed in itertools.product(cells, cfg.seeds):
        ic_ss, data_ss, search_ss = _seed_streams(seed)
        search_seed = int(search_ss.generate_state(1)[0])
        gt = generate_solution(cell.op, np.random.default_rng(ic_ss), T=T, xi=xi, j_max=cfg.equation.get("j_max", 1))
        ds = make_dataset(gt, cell.n, cfg.noise_var, cfg.split, np.random.default_rng(data_ss), cfg.n_test)
        Phi, val, test = _problem(ds, cell.basis)
        for method in cfg.methods:
            if method == "pilr" and not cell.cs.linear:
                fit_many = _fit_many_soft(cell, Phi, ds.y_train, val, test, cfg.optimizer)
            else:
                fit_many = _fit_many_linear(cell, Phi, ds.y_train, val, test, method)
            res = sweep_hyperparams(fit_many, cfg.budget, search_seed, cfg.low, cfg.high, search_nu=method == "pilr")
            for i, (x, v, score, div) in enumerate(res.candidates):
                rows.append(dict(
                    experiment=cfg.name, method=method, seed=seed, d=cell.basis.size, n=cell.n, candidate=i,
                    xi=x, nu=v, mse_val=score, diverged=div, selected=(x == res.xi and v == res.nu),
                ))
    return rows


def approx_rows(cfg):
    """Best-in-span error of each basis against each seed's ground truth."""
    T, xi = cfg.extents
    rows = []
    for cell in build_cells(cfg):
        for seed in cfg.seeds:
            ic_ss, _, _ = _seed_streams(seed)
            gt = generate_solution(cell.op, np.random.default_rng(ic_ss), T=T, xi=xi, j_max=cfg.equation.get("j_max", 1))
            rows.append(dict(experiment=cfg.name, d=cell.basis.size, n=cell.n, seed=seed,
                             approx_error=approximation_error(cell.basis, gt)))
    return rows


@contextlib.contextmanager
def _sink(target):
    if hasattr(target, "write"):
        yield target
        return
    try:
        fh = open(target, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write {target}: {exc}") from exc
    with fh:
        yield fh


def write_rows(rows, columns, target):
    """CSV with a header row; ``target`` is a path or an open text file."""
    with _sink(target) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r.get(c, "")) for c in columns])
