"""Experiment runners.

Each runner expands a config into independent cells, evaluates them (in a
process pool when ``threads > 1``), and assembles an
:class:`ExperimentReport`. Cells carry everything they need, results are
collected in cell order, and a cell that raises a library error is recorded
as failed without stopping the run.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
import itertools
import logging
import math
import os
import time

import numpy as np

from .. import __version__
from ..dynamics import (
    dephasing_jump,
    instantaneous_state,
    lindblad_fidelity,
    propagate_lindblad,
    propagate_schrodinger,
    transfer_probability,
)
from ..exceptions import ConfigError, GeoQuadError
from ..metric import QuantumMetric
from ..models import build_model
from ..noise import QuasistaticSpec
from ..pulse import analytic_pauli_pulse, make_pulse
from .report import ExperimentReport

logger = logging.getLogger(__name__)

FAST_QUAD = ("geometric", "historical", "analytic", "sw_closed_form")
_MODEL_AXES = {"u_tilde", "omega", "de_z", "e_z", "de_x", "z", "phi"}


@dataclass(frozen=True)
class Cell:
    """Immutable description of one unit of work."""

    index: int
    protocol: str
    model: str
    params: tuple
    factor: float
    eps0: float
    eps_f: float
    t_f: float
    level: int = 0
    samples: int = 20001
    steps: int = 20000
    step_rule: str = "magnus4"
    pulse_model: str = None
    pulse_params: tuple = None
    t2: float = None
    dephasing: str = "A"
    offset: float = 0.0
    noise_mode: str = "resynthesize"
    record_every: int = 0


def _items(d):
    return tuple(sorted(d.items()))


@lru_cache(maxsize=32)
def _model(name, params, factor):
    return build_model(name, dict(params), factor)


@lru_cache(maxsize=64)
def _schedule(protocol, model_name, params, factor, eps0, eps_f, t_f, level, samples):
    if protocol == "analytic":
        return analytic_pauli_pulse(eps0, eps_f, dict(params).get("z", 0.1), t_f)
    model = _model(model_name, params, factor)
    kw = {}
    if protocol == "sw_closed_form":
        kw = {"omega": dict(params)["omega"], "de_z": dict(params)["de_z"]}
    return make_pulse(protocol, model, eps0, eps_f, t_f, level, samples, **kw)


def cell_schedule(cell):
    """Pulse for ``cell``, designed on its pulse model and boundaries."""
    name = cell.pulse_model or cell.model
    params = cell.pulse_params if cell.pulse_params is not None else cell.params
    eps0, eps_f = cell.eps0, cell.eps_f
    if cell.offset and cell.noise_mode == "resynthesize":
        eps0, eps_f = eps0 + cell.offset, eps_f + cell.offset
    sched = _schedule(cell.protocol, name, params, cell.factor, eps0, eps_f, cell.t_f, cell.level,
                      cell.samples)
    if cell.offset and cell.noise_mode == "additive":
        sched = sched.shifted(cell.offset)
    return sched


def _jumps(cell, dim):
    return [dephasing_jump(cell.t2, cell.dephasing, dim)]


def evaluate_transfer(cell):
    """Transfer fidelity of one cell: unitary, or Lindblad when ``t2`` is set."""
    model = _model(cell.model, cell.params, cell.factor)
    sched = cell_schedule(cell)
    if cell.t2 is None:
        p = transfer_probability(model, sched, cell.level, cell.steps, cell.step_rule)
    else:
        p = lindblad_fidelity(model, sched, _jumps(cell, model.dim), cell.level, cell.steps,
                              cell.step_rule)
    return {"fidelity": p, "error": 1.0 - p, "delta": sched.delta}


def trace(model, sched, level=0, steps=20000, step_rule="magnus4", t2=None, dephasing="A",
          stride=1):
    """Populations and instantaneous-eigenstate fidelity along one run.

    Unitary when ``t2`` is None, Lindblad dephasing otherwise. Every
    ``stride``-th step is kept, plus the final one.
    """
    psi0 = instantaneous_state(model, sched(0.0), level)
    if t2 is None:
        traj = propagate_schrodinger(model, sched, psi0, steps, True, step_rule)
    else:
        jumps = [dephasing_jump(t2, dephasing, model.dim)]
        traj = propagate_lindblad(model, sched, jumps, np.outer(psi0, psi0.conj()), steps, True,
                                  step_rule)
    idx = np.unique(np.r_[np.arange(0, len(traj.t), max(1, stride)), len(traj.t) - 1])
    t = traj.t[idx]
    states = traj.states[idx]
    ref = np.array([instantaneous_state(model, e, level) for e in sched(t)])
    if states.ndim == 2:
        fid = np.abs(np.einsum("ni,ni->n", ref.conj(), states)) ** 2
    else:
        fid = np.einsum("ni,nij,nj->n", ref.conj(), states, ref).real
    return {"t": t, "populations": traj.populations()[idx], "fidelity": np.clip(fid, 0.0, 1.0)}


def evaluate_trace(cell):
    """Population and fidelity time series for one protocol and one T2."""
    model = _model(cell.model, cell.params, cell.factor)
    return trace(model, cell_schedule(cell), cell.level, cell.steps, cell.step_rule, cell.t2,
                 cell.dephasing, cell.record_every)


def _guarded(payload):
    fn, cell = payload
    try:
        return True, fn(cell)
    except (GeoQuadError, ValueError, ArithmeticError) as exc:
        return False, f"{type(exc).__name__}: {exc}"


def run_cells(fn, cells, threads=None):
    """Evaluate ``fn`` on every cell; results come back in cell order."""
    threads = default_threads() if threads is None else int(threads)
    payload = [(fn, c) for c in cells]
    if threads <= 1 or len(cells) <= 1:
        return [_guarded(p) for p in payload]
    chunk = max(1, len(cells) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_guarded, payload, chunksize=chunk))


def default_threads():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _metadata(cfg, failures):
    import numpy
    import scipy

    return {
        "config_hash": cfg.digest(),
        "versions": {"geoquad": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__},
        "failures": failures,
    }


def _base_cell(cfg, protocol, **kw):
    cell = Cell(index=0, protocol=protocol, model=cfg.model, params=_items(cfg.params),
                factor=cfg.factor, eps0=cfg.eps0, eps_f=cfg.eps_f, t_f=cfg.t_f, level=cfg.level,
                samples=cfg.samples, steps=cfg.steps_for(cfg.t_f), step_rule=cfg.step_rule,
                pulse_model=cfg.pulse_model, dephasing=cfg.dephasing, noise_mode=cfg.noise_mode,
                record_every=cfg.record_every)
    return _apply(cell, cfg, kw)


def _apply(cell, cfg, values):
    """Place axis values into a cell (model parameters, pulse time, noise settings)."""
    params = dict(cell.params)
    changes = {}
    d_omega = None
    for name, v in values.items():
        v = float(v)
        if name in _MODEL_AXES:
            params[name] = v
        elif name == "t_f":
            changes["t_f"] = v
            changes["steps"] = cfg.steps_for(v)
        elif name == "t2":
            changes["t2"] = v
        elif name == "delta_eps":
            changes["offset"] = v
        elif name == "delta_omega":
            d_omega = v
        else:
            raise ConfigError(f"axis {name!r} is not supported here")
    changes["params"] = _items(params)
    if d_omega is not None:
        changes["pulse_params"] = _items({**params, "omega": params["omega"] + d_omega})
    return replace(cell, **changes)


def _grid(cfg, names=None):
    axes = [ax for ax in cfg.axes if names is None or ax.name in names]
    return [(ax.name, ax.grid()) for ax in axes]


def _collect(cfg, axes, protocols, cells_by_protocol, fn, columns_of, threads):
    shape = tuple(len(v) for _, v in axes)
    flat = [c for p in protocols for c in cells_by_protocol[p]]
    results = run_cells(fn, flat, threads if threads is not None else cfg.threads)
    n = int(np.prod(shape)) if shape else 1
    failed = np.zeros(n, dtype=bool)
    failures = []
    columns = {}
    for k, p in enumerate(protocols):
        chunk = results[k * n:(k + 1) * n]
        for name in columns_of(p):
            columns[f"{name}_{p}"] = np.full(n, np.nan)
        for i, (ok, val) in enumerate(chunk):
            if ok:
                for name in columns_of(p):
                    columns[f"{name}_{p}"][i] = val[name]
            else:
                failed[i] = True
                failures.append({"cell": i, "protocol": p, "error": val})
                logger.warning("cell %d (%s) failed: %s", i, p, val)
    columns = {k: v.reshape(shape) for k, v in columns.items()}
    return columns, failed.reshape(shape), failures


def _transfer_columns(protocol):
    if protocol in FAST_QUAD:
        return ("error", "fidelity", "delta")
    return ("error", "fidelity")


def run_transfer_grid(cfg, threads=None):
    """Transfer error ``1 - p`` and fidelity per protocol on the configured grid."""
    start = time.perf_counter()
    axes = _grid(cfg)
    names = [n for n, _ in axes]
    points = list(itertools.product(*[v for _, v in axes]))
    cells = {}
    for p in cfg.protocols:
        cells[p] = [replace(_base_cell(cfg, p, **dict(zip(names, pt))), index=i)
                    for i, pt in enumerate(points)]
    columns, failed, failures = _collect(cfg, axes, cfg.protocols, cells, evaluate_transfer,
                                         _transfer_columns, threads)
    report = ExperimentReport(cfg.kind, axes, columns, failed, cfg.to_dict(),
                              _metadata(cfg, failures))
    report.timing["seconds"] = time.perf_counter() - start
    return report


def run_fig2(cfg, threads=None):
    """Two-level transfer error against pulse time for each protocol."""
    if cfg.model != "pauli":
        raise ConfigError("the two-level comparison runs on the pauli model")
    return run_transfer_grid(cfg, threads)


def run_fig3(cfg, threads=None):
    """Six-level transfer error against pulse time; pulses may come from a reduced model."""
    if cfg.model not in ("dqd6", "dqd6_truncated"):
        raise ConfigError("the six-level comparison runs on a dqd6 model")
    return run_transfer_grid(cfg, threads)


def run_optimal_time(cfg, threads=None):
    """Best pulse time ``t_f*`` and fidelity per T2 and protocol under dephasing.

    The returned report is indexed by T2; the full ``(T2, t_f)`` fidelity
    sweep is attached as the child ``"sweep"``.
    """
    start = time.perf_counter()
    axes = _grid(cfg, {"t2", "t_f"})
    if [n for n, _ in axes] != ["t2", "t_f"]:
        axes = sorted(axes, key=lambda a: a[0] != "t2")
    t2s, tfs = axes[0][1], axes[1][1]
    points = list(itertools.product(t2s, tfs))
    cells = {p: [replace(_base_cell(cfg, p, t2=a, t_f=b), index=i) for i, (a, b) in enumerate(points)]
             for p in cfg.protocols}
    columns, failed, failures = _collect(cfg, axes, cfg.protocols, cells, evaluate_transfer,
                                         lambda p: ("fidelity",), threads)
    meta = _metadata(cfg, failures)
    sweep = ExperimentReport("sweep", axes, columns, failed, {}, {})
    summary, sfailed = {}, np.zeros(len(t2s), dtype=bool)
    for p in cfg.protocols:
        fid = columns[f"fidelity_{p}"]
        t_opt = np.full(len(t2s), np.nan)
        f_opt = np.full(len(t2s), np.nan)
        for i in range(len(t2s)):
            row = fid[i]
            if np.all(np.isnan(row)):
                sfailed[i] = True
                continue
            j = int(np.nanargmax(row))
            t_opt[i], f_opt[i] = tfs[j], row[j]
        summary[f"tf_opt_{p}"] = t_opt
        summary[f"fidelity_opt_{p}"] = f_opt
    report = ExperimentReport(cfg.kind, [("t2", t2s)], summary, sfailed, cfg.to_dict(), meta,
                              {"sweep": sweep})
    report.timing["seconds"] = time.perf_counter() - start
    return report


def run_quasistatic(cfg, threads=None):
    """Fidelity deviation under a detuning offset applied to both pulse boundaries.

    Offsets come from the ``delta_eps`` axis, or from Gaussian draws with
    ``noise.sigma`` when ``noise.samples > 0``.
    """
    start = time.perf_counter()
    gaussian = cfg.noise_samples > 0
    if gaussian:
        offsets = QuasistaticSpec(cfg.sigma, cfg.noise_samples, cfg.seed).offsets()
        axes = [("sample", np.arange(len(offsets), dtype=float))]
    else:
        axes = _grid(cfg, {"delta_eps"})
        if not axes:
            raise ConfigError("quasistatic runs need a delta_eps axis or noise.samples > 0")
        offsets = axes[0][1]
    cells = {p: [replace(_base_cell(cfg, p, delta_eps=d), index=i) for i, d in enumerate(offsets)]
             for p in cfg.protocols}
    nominal = run_cells(evaluate_transfer, [_base_cell(cfg, p) for p in cfg.protocols], 1)
    columns, failed, failures = _collect(cfg, axes, cfg.protocols, cells, evaluate_transfer,
                                         lambda p: ("fidelity",), threads)
    out = {"offset": np.asarray(offsets, dtype=float)} if gaussian else {}
    for p, (ok, val) in zip(cfg.protocols, nominal):
        if not ok:
            raise _NominalFailure(val)
        out[f"fidelity_{p}"] = columns[f"fidelity_{p}"]
        out[f"deviation_{p}"] = columns[f"fidelity_{p}"] - val["fidelity"]
    meta = _metadata(cfg, failures)
    meta["noiseless_fidelity"] = {p: val["fidelity"] for p, (_, val) in zip(cfg.protocols, nominal)}
    report = ExperimentReport(cfg.kind, axes, out, failed, cfg.to_dict(), meta)
    report.timing["seconds"] = time.perf_counter() - start
    return report


class _NominalFailure(GeoQuadError):
    pass


def run_miscalibration(cfg, threads=None):
    """Fidelity change when the pulse assumes ``omega + delta_omega`` instead of ``omega``."""
    start = time.perf_counter()
    axes = _grid(cfg, {"t_f", "delta_omega"})
    if sorted(n for n, _ in axes) != ["delta_omega", "t_f"]:
        raise ConfigError("miscalibration runs need t_f and delta_omega axes")
    axes = sorted(axes, key=lambda a: a[0] != "t_f")
    tfs, doms = axes[0][1], axes[1][1]
    omega = cfg.params.get("omega")
    if omega is None or np.any(omega + doms <= 0):
        raise ConfigError("omega + delta_omega must be positive for every grid value")
    points = list(itertools.product(tfs, doms))
    cells = {p: [replace(_base_cell(cfg, p, t_f=a, delta_omega=b), index=i)
                 for i, (a, b) in enumerate(points)] for p in cfg.protocols}
    calib = {p: [replace(_base_cell(cfg, p, t_f=a), index=i) for i, a in enumerate(tfs)]
             for p in cfg.protocols}
    cal_cols, cal_failed, cal_failures = _collect(cfg, axes[:1], cfg.protocols, calib,
                                                  evaluate_transfer, lambda p: ("fidelity",), threads)
    columns, failed, failures = _collect(cfg, axes, cfg.protocols, cells, evaluate_transfer,
                                         lambda p: ("fidelity",), threads)
    out = {}
    for p in cfg.protocols:
        out[f"deviation_{p}"] = columns[f"fidelity_{p}"] - cal_cols[f"fidelity_{p}"][:, None]
    failed = failed | cal_failed[:, None]
    report = ExperimentReport(cfg.kind, axes, out, failed, cfg.to_dict(),
                              _metadata(cfg, cal_failures + failures))
    report.timing["seconds"] = time.perf_counter() - start
    return report


def run_population_trace(cfg, threads=None, schedule=None):
    """Populations and instantaneous-ground-state fidelity over time.

    Columns ``pop<i>_<protocol>`` and ``fidelity_<protocol>`` come from the
    Lindblad run at each T2; the ``..._noiseless`` columns come from the
    unitary run and repeat along the T2 axis. With ``schedule`` given, that
    pulse is evolved instead of synthesized ones and its columns are
    labelled ``pulse``.
    """
    start = time.perf_counter()
    t2s = np.asarray(cfg.t2, dtype=float)
    if schedule is not None:
        model = _model(cfg.model, _items(cfg.params), cfg.factor)
        steps = cfg.steps_for(schedule.t_f)
        labels = ["pulse"]
        results = [(True, trace(model, schedule, cfg.level, steps, cfg.step_rule, t2, cfg.dephasing,
                                cfg.record_every)) for t2 in [None, *t2s]]
    else:
        labels = list(cfg.protocols)
        cells = []
        for p in labels:
            cells.append(_base_cell(cfg, p))
            cells += [_base_cell(cfg, p, t2=t2) for t2 in t2s]
        results = run_cells(evaluate_trace, cells, threads if threads is not None else cfg.threads)
        failures = [f"{c.protocol}: {r}" for c, (ok, r) in zip(cells, results) if not ok]
        if failures:
            raise _NominalFailure("; ".join(failures))
    if len(t2s) == 0:
        t2s = np.array([np.inf])
        noisy_of = lambda block: block[:1]  # noqa: E731
    else:
        noisy_of = lambda block: block[1:]  # noqa: E731
    t = results[0][1]["t"]
    dim = results[0][1]["populations"].shape[1]
    columns = {}
    per = len(results) // len(labels)
    for k, p in enumerate(labels):
        block = [r for _, r in results[k * per:(k + 1) * per]]
        clean, noisy = block[0], noisy_of(block)
        for i in range(dim):
            columns[f"pop{i}_{p}"] = np.stack([r["populations"][:, i] for r in noisy])
        columns[f"fidelity_{p}"] = np.stack([r["fidelity"] for r in noisy])
        for i in range(dim):
            columns[f"pop{i}_{p}_noiseless"] = np.tile(clean["populations"][:, i], (len(t2s), 1))
        columns[f"fidelity_{p}_noiseless"] = np.tile(clean["fidelity"], (len(t2s), 1))
    report = ExperimentReport(cfg.kind, [("t2", t2s), ("t", t)], columns, None, cfg.to_dict(),
                              _metadata(cfg, []))
    report.timing["seconds"] = time.perf_counter() - start
    return report


def run_metric(cfg, n_points=401):
    """Metric component, Berry curvature and gap along the model's control parameter."""
    start = time.perf_counter()
    model = _model(cfg.model, _items(cfg.params), cfg.factor)
    if model.n_params != 1:
        raise ConfigError("metric scans need a one-parameter model")
    ax = cfg.axis("eps")
    xs = ax.grid() if ax is not None else np.linspace(cfg.eps0, cfg.eps_f, n_points)
    qm = QuantumMetric(model, cfg.level).fit()
    feats = qm.transform(xs.reshape(-1, 1))
    names = qm.get_feature_names_out()
    columns = {n: feats[:, i] for i, n in enumerate(names)}
    evals = np.linalg.eigvalsh(model.h_batch(xs))
    columns["gap"] = evals[:, cfg.level + 1] - evals[:, cfg.level]
    columns["sqrt_g"] = np.sqrt(columns[names[0]])
    report = ExperimentReport("metric", [("eps", xs)], columns, None, cfg.to_dict(),
                              _metadata(cfg, []))
    report.timing["seconds"] = time.perf_counter() - start
    return report


def run_pulse(cfg, n_points=501):
    """Sampled pulse shapes ``eps(t)`` for each protocol at ``t_f``."""
    start = time.perf_counter()
    t = np.linspace(0.0, cfg.t_f, n_points)
    columns, meta = {}, {}
    for p in cfg.protocols:
        sched = cell_schedule(_base_cell(cfg, p))
        columns[f"eps_{p}"] = sched(t)
        info = {"delta": None if math.isnan(sched.delta) else float(sched.delta)}
        if p in ("geometric", "historical"):
            model = _model(cfg.pulse_model or cfg.model, _items(cfg.params), cfg.factor)
            kc = sched.killing_charge(model, cfg.level)
            info["killing_rel_spread"] = float((kc.max() - kc.min()) / kc.mean())
        meta[p] = info
    metadata = _metadata(cfg, [])
    metadata["pulses"] = meta
    report = ExperimentReport("pulse", [("t", t)], columns, None, cfg.to_dict(), metadata)
    report.timing["seconds"] = time.perf_counter() - start
    return report


RUNNERS = {
    "fig2_two_level": run_fig2,
    "fig3_6x6": run_fig3,
    "fig5_grids": run_transfer_grid,
    "fig6_quasistatic": run_quasistatic,
    "fig7_optimal_time": run_optimal_time,
    "fig8_miscal": run_miscalibration,
    "pop_trace": run_population_trace,
    "custom": run_transfer_grid,
}


def run_experiment(cfg, threads=None):
    return RUNNERS[cfg.kind](cfg, threads)
