"""Experiment pipelines, persistence and cross-run comparison."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import pickle
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .. import __version__
from ..elastic import TransferPoint, transfer_evaluate
from ..hnn import ArchSpec, DivergenceError, TrainConfig, init_params, predict, train
from ..integrator import Trajectory, energy_drift, rk4_solve, trajectory_error
from ..pruner import IterationRecord, Mask, PruneSchedule, PruneTrace, Ticket, imp_run, save_ticket, ticket_to_bytes
from ..rgflow import flow_from_trace, layer_magnitude_fraction
from ..scaling import (InsufficientDataError, exponent_table, fit_power_law, layerwise_exponents, regimes_csv,
                       segment_regimes)
from ..systems import SystemSpec
from .config import ExperimentConfig, derive_seed

log = logging.getLogger(__name__)

OUT_ENV = "TICKETLAB_OUT"
CACHE_ENV = "TICKETLAB_CACHE"


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    out_dir: str
    files: list[str] = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0
    status: str = "ok"
    summary: dict = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return Path(self.out_dir) / name

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        data = json.loads(path.read_text())
        return cls(**data)


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# -- small I/O helpers ---------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def write_atomic(path: Path, data: str | bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    tmp.replace(path)
    return path


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _num(v) for v in row])
    return buf.getvalue()


def trace_csv(trace: PruneTrace) -> str:
    """Columns: iteration, density, d_1..d_L, n_unmasked, epsilon, final_loss, M_1..M_L, floor_bound, diverged."""
    L = trace.arch.n_layers
    header = (["iteration", "density"] + [f"d_{i+1}" for i in range(L)] + ["n_unmasked", "epsilon", "final_loss"]
              + [f"M_{i+1}" for i in range(L)] + ["floor_bound", "diverged"])
    rows = [[r.iteration, r.density, *r.layer_density, r.n_unmasked, r.error, r.loss, *r.magnitude_fraction,
             r.floor_bound, r.diverged] for r in trace.records]
    return _csv(header, rows)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    return {k: np.array([float(r[k]) if r[k] != "" else math.nan for r in rows]) for k in rows[0]}


def transfer_csv(points: Sequence[TransferPoint]) -> str:
    return _csv(["source_density", "target_t_max", "epsilon", "final_loss", "direction"],
                [[p.source_density, p.target_t_max, p.epsilon, p.final_loss, p.direction] for p in points])


# -- cached building blocks ----------------------------------------------------------

@lru_cache(maxsize=32)
def _reference(name: str, ic: tuple, t_max: float, n_points: int, substeps: int) -> Trajectory:
    from ..systems import get_system
    return rk4_solve(get_system(name, ic), np.linspace(0.0, t_max, n_points), substeps)


def reference_for(system: SystemSpec, config: TrainConfig, substeps: int = 100) -> Trajectory:
    return _reference(system.name, tuple(system.initial_state), float(config.t_max), int(config.n_points), substeps)


@lru_cache(maxsize=1)
def _code_fingerprint() -> str:
    # cached traces go stale when any module on the training path changes
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for name in ("systems.py", "hnn.py", "integrator.py", "pruner.py", "rgflow.py", "elastic.py"):
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


def _cache_dir(explicit=None) -> Path | None:
    d = explicit if explicit is not None else os.environ.get(CACHE_ENV)
    return Path(d) if d else None


def _memo(tag: str, spec: dict, compute: Callable, cache_dir=None):
    """``compute()``, memoised on disk under a key derived from ``spec``.

    Every run is deterministic, so a key covering all inputs, the package
    version and a hash of the numerical modules identifies the result.
    """
    root = _cache_dir(cache_dir)
    if root is None:
        return compute()
    blob = json.dumps(spec | {"version": __version__, "code": _code_fingerprint()}, sort_keys=True,
                      default=_jsonable)
    path = root / f"{tag}_{hashlib.sha256(blob.encode()).hexdigest()[:24]}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    result = compute()
    root.mkdir(parents=True, exist_ok=True)
    write_atomic(path, pickle.dumps(result))
    return result


def _train_spec(config: TrainConfig) -> dict:
    return asdict(config) | {"betas": list(config.betas)}


def cached_imp_run(system: SystemSpec, arch: ArchSpec, schedule: PruneSchedule, config: TrainConfig,
                   seed: int, substeps: int = 100, cache_dir=None) -> PruneTrace:
    """:func:`imp_run` against an RK4 reference, memoised when a cache directory is configured."""
    spec = {"system": system.name, "ic": list(system.initial_state), "arch": arch.to_dict(),
            "schedule": asdict(schedule), "train": _train_spec(config), "seed": seed, "substeps": substeps}

    def compute():
        ref = reference_for(system, config, substeps)
        return imp_run(system, arch, schedule, config, seed=seed, reference=ref)

    return _memo("imp", spec, compute, cache_dir)


def cached_transfer(tickets: Sequence[Ticket], system: SystemSpec, config: TrainConfig, t_max: float,
                    direction: str, fresh_seed: int | None, drop, substeps: int, cache_dir=None):
    spec = {"tickets": [hashlib.sha256(ticket_to_bytes(t)).hexdigest() for t in tickets],
            "system": system.name, "ic": list(system.initial_state), "train": _train_spec(config),
            "t_max": t_max, "direction": direction, "fresh": fresh_seed, "drop": list(drop), "substeps": substeps}
    return _memo("transfer", spec, lambda: transfer_evaluate(tickets, system, config, (t_max,), direction,
                                                             fresh_seed, drop, substeps), cache_dir)


def _map(fn: Callable, items: Sequence, parallelism: int) -> list:
    if parallelism <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
        return list(pool.map(fn, items))


# -- pipelines ---------------------------------------------------------------------------

class _Writer:
    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []

    def text(self, name: str, data: str | bytes) -> Path:
        p = write_atomic(self.out / name, data)
        self.files.append(name)
        return p

    def ticket(self, name: str, ticket: Ticket) -> Path:
        (self.out / name).parent.mkdir(parents=True, exist_ok=True)
        p = save_ticket(ticket, self.out / name)
        self.files.append(name)
        return p


def _init_seed(cfg: ExperimentConfig, system_name: str, index: int = 0) -> int:
    return derive_seed(cfg.seed, f"init:{system_name}", index)


def _write_trace(w: _Writer, prefix: str, trace: PruneTrace, cfg: ExperimentConfig, tickets: bool = True,
                 layer: int | None = None) -> dict:
    w.text(f"{prefix}trace.csv", trace_csv(trace))
    if tickets:
        for r, t in zip([r for r in trace.records if not r.diverged], trace.tickets()):
            w.ticket(f"{prefix}tickets/iter_{r.iteration:03d}.tkt", t)
    d = trace.densities if layer is None else trace.layer_densities(layer)
    summary = {"iterations": len(trace.records), "diverged_at": trace.diverged_at,
               "compute_seconds": trace.wall_clock}
    if len(d) >= 5:
        seg = segment_regimes(d, trace.errors, cfg.plateau_factor)
        w.text(f"{prefix}regimes.csv", regimes_csv(seg))
        summary["low_plateau_points"] = seg.n_low()
        window = cfg.fit_window or seg.power_window
        try:
            fit = fit_power_law(d, trace.errors, window) if window else None
        except InsufficientDataError:
            fit = None
        if fit is not None:
            w.text(f"{prefix}fit.txt", fit.summary())
            summary.update(gamma=fit.gamma, c=fit.c, r2=fit.r2, window=list(fit.window))
    return summary


def _run_train_full(cfg: ExperimentConfig, w: _Writer) -> dict:
    system = cfg.system_spec()
    arch = cfg.arch()
    params = init_params(arch, _init_seed(cfg, system.name))
    mask = Mask.ones(arch)
    ref = reference_for(system, cfg.train, cfg.substeps)
    trace = PruneTrace(system.name, arch, cfg.prune, params.seed, params.init.copy())
    w.ticket("ticket.tkt", Ticket(mask, params.init, arch, params.seed))
    try:
        res = train(params, None, system, cfg.train)
    except DivergenceError as exc:
        trace.records.append(IterationRecord(0, 1.0, mask.layer_density(), mask.count, math.nan, math.nan,
                                             np.full(arch.n_layers, math.nan), mask, None, False, True))
        trace.diverged_at = 0
        w.text("trace.csv", trace_csv(trace))
        return {"status": "diverged", "diverged_epoch": exc.epoch}
    states = predict(res.params, None, system, cfg.train.grid, cfg.train.ic_mode)
    eps = trajectory_error(states, ref)
    nn_drift = energy_drift(Trajectory(cfg.train.grid, states, system.name), system)
    trace.records.append(IterationRecord(0, 1.0, mask.layer_density(), mask.count, eps, res.final_loss,
                                         layer_magnitude_fraction(res.params, mask), mask))
    w.text("trace.csv", trace_csv(trace))
    w.text("loss_history.csv", _csv(["epoch", "loss"], enumerate(res.history)))
    w.text("summary.csv", _csv(["system", "epsilon", "final_loss", "nn_energy_drift", "reference_energy_drift"],
                               [[system.name, eps, res.final_loss, nn_drift, energy_drift(ref, system)]]))
    return {"epsilon": eps, "final_loss": res.final_loss, "nn_energy_drift": nn_drift}


def _layer_job(args):
    system, arch, schedule, train_cfg, seed, substeps, cache = args
    return cached_imp_run(system, arch, schedule, train_cfg, seed, substeps, cache)


def _run_imp(cfg: ExperimentConfig, w: _Writer, cache_dir=None) -> dict:
    system = cfg.system_spec()
    arch = cfg.arch()
    seed = _init_seed(cfg, system.name)
    if cfg.kind == "imp_layerwise":
        scheds = [replace(cfg.prune, scope="single_layer", layer=l) for l in cfg.layers]
        jobs = [(system, arch, s, cfg.train, seed, cfg.substeps, cache_dir) for s in scheds]
        traces = _map(_layer_job, jobs, cfg.parallelism)
        summary, curves = {}, {}
        for layer, trace in zip(cfg.layers, traces):
            summary[f"layer_{layer}"] = _write_trace(w, f"layer_{layer}/", trace, cfg, layer=layer)
            curves[layer] = (trace.layer_densities(layer), trace.errors)
        rows = layerwise_exponents({l: c for l, c in curves.items() if len(c[0]) >= 5}, cfg.plateau_factor)
        w.text("layer_exponents.txt", exponent_table(rows))
        w.text("layer_exponents.csv", _csv(
            ["layer", "gamma", "r2", "window_lo", "window_hi", "n_points"],
            [[r.layer, r.gamma, r.fit.r2 if r.fit else math.nan, *(r.fit.window if r.fit else (math.nan, math.nan)),
              r.fit.n_points if r.fit else 0] for r in rows]))
        summary["gamma"] = {str(r.layer): r.gamma for r in rows}
        return summary
    trace = cached_imp_run(system, arch, cfg.prune, cfg.train, seed, cfg.substeps, cache_dir)
    summary = _write_trace(w, "", trace, cfg)
    if len([r for r in trace.records if not r.diverged]) >= 2:
        flow = flow_from_trace(trace)
        w.text("rgflow.csv", flow.to_csv())
        summary["sigma"] = [float(s) for s in flow.sigma.sigma]
    if trace.diverged_at is not None:
        summary["status"] = "diverged"
    return summary


def _transfer_job(args):
    return cached_transfer(*args)


def _run_transfer(cfg: ExperimentConfig, w: _Writer, cache_dir=None) -> dict:
    src_sys = cfg.system_spec(cfg.source_system)
    tgt_sys = cfg.system_spec(cfg.target_system)
    src_arch, tgt_arch = cfg.arch(src_sys.name), cfg.arch(tgt_sys.name)
    src_trace = cached_imp_run(src_sys, src_arch, cfg.prune, cfg.train, _init_seed(cfg, src_sys.name),
                               cfg.substeps, cache_dir)
    native = cached_imp_run(tgt_sys, tgt_arch, cfg.prune, cfg.train, _init_seed(cfg, tgt_sys.name),
                            cfg.substeps, cache_dir)
    summary = {"source": _write_trace(w, "source/", src_trace, cfg),
               "native": _write_trace(w, "native/", native, cfg, tickets=False)}
    tickets = src_trace.tickets()[:: cfg.transfer_every]
    direction = f"{src_sys.name}->{tgt_sys.name}"
    fresh = _init_seed(cfg, tgt_sys.name) if cfg.fresh_init else None
    jobs = [(tickets, tgt_sys, cfg.train, t, direction, fresh, cfg.drop, cfg.substeps, cache_dir)
            for t in cfg.t_max_sweep]
    points = [p for chunk in _map(_transfer_job, jobs, cfg.parallelism) for p in chunk]
    w.text("transfer.csv", transfer_csv(points))
    summary["points"] = len(points)
    summary["transfer_seconds"] = sum(p.wall_clock for p in points)
    summary["diverged"] = sum(p.diverged for p in points)
    return summary


def run(cfg: ExperimentConfig, out: str | os.PathLike | None = None, cache_dir=None) -> RunManifest:
    """Execute one experiment and write its artifacts plus ``manifest.json``."""
    out_dir = Path(out or cfg.out or default_out_root() / f"{cfg.kind}_{cfg.config_hash()}")
    out_dir.mkdir(parents=True, exist_ok=True)
    w = _Writer(out_dir)
    start = time.perf_counter()
    w.text("config.ini", cfg.to_ini())
    if cfg.kind == "train_full":
        summary = _run_train_full(cfg, w)
    elif cfg.kind in ("imp_global", "imp_layerwise", "rg_observables"):
        summary = _run_imp(cfg, w, cache_dir)
    else:
        summary = _run_transfer(cfg, w, cache_dir)
    manifest = RunManifest(cfg.kind, cfg.config_hash(), str(out_dir), sorted(w.files) + ["manifest.json"],
                           wall_clock=time.perf_counter() - start, summary=summary,
                           status=summary.pop("status", "ok") if isinstance(summary, dict) else "ok")
    write_atomic(out_dir / "manifest.json", manifest.to_json())
    return manifest


# -- comparison ------------------------------------------------------------------------

@dataclass
class UniversalityReport:
    sigma_a: np.ndarray
    sigma_b: np.ndarray
    gamma_a: float | None
    gamma_b: float | None
    agree: bool

    def table(self) -> str:
        lines = [f"{'':>8}  {'run A':>10}  {'run B':>10}"]
        for i, (a, b) in enumerate(zip(self.sigma_a, self.sigma_b), start=1):
            lines.append(f"{'sigma_' + str(i):>8}  {a:>10.4f}  {b:>10.4f}")
        if self.gamma_a is not None or self.gamma_b is not None:
            ga = "-" if self.gamma_a is None else f"{self.gamma_a:.4f}"
            gb = "-" if self.gamma_b is None else f"{self.gamma_b:.4f}"
            lines.append(f"{'gamma':>8}  {ga:>10}  {gb:>10}")
        lines.append("relevant layers agree: " + ("yes" if self.agree else "NO"))
        return "\n".join(lines) + "\n"


def read_sigma(path) -> np.ndarray:
    """Aggregated sigma from the ``mean`` row of an rgflow CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, mean = rows[0], next((r for r in rows[1:] if r and r[0] == "mean"), None)
    if mean is None:
        raise ValueError(f"{path}: no aggregate row")
    return np.array([float(v) if v else math.nan for h, v in zip(header, mean) if h.startswith("sigma_")])


def _read_gamma(run_dir: Path) -> float | None:
    p = run_dir / "fit.txt"
    if not p.exists():
        return None
    for line in p.read_text().splitlines():
        if line.startswith("gamma"):
            return float(line.split("=", 1)[1])
    return None


def compare_runs(a, b) -> UniversalityReport:
    """Side-by-side sigma (and gamma) of two runs with an agreement verdict on relevant layers."""
    dirs = []
    for m in (a, b):
        d = Path(m.out_dir) if isinstance(m, RunManifest) else Path(m)
        if d.name == "manifest.json":
            d = d.parent
        if not (d / "rgflow.csv").exists():
            raise FileNotFoundError(f"{d}: run has no rgflow.csv observables")
        dirs.append(d)
    sa, sb = read_sigma(dirs[0] / "rgflow.csv"), read_sigma(dirs[1] / "rgflow.csv")
    agree = sa.shape == sb.shape and bool(np.all(np.sign(sa) == np.sign(sb)))
    return UniversalityReport(sa, sb, _read_gamma(dirs[0]), _read_gamma(dirs[1]), agree)
