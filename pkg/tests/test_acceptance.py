"""Acceptance criteria, one test per criterion.

Every test prints one ``[PASS]``/``[FAIL]`` line with the measured numbers
before asserting, so ``pytest -s -k acceptance`` doubles as a report.

The pruning experiments (criteria 4, 5, 6 and 9) take CPU hours on a cold
start.  Their traces are memoised under ``$TICKETLAB_CACHE`` (default
``.ticketlab-cache`` in the repository root), keyed on the full
configuration and a hash of the numerical modules, so a warm run finishes in
minutes and any code change invalidates stale entries.  Runtime limits are
checked against the compute time recorded when an entry was produced.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from ticketlab.diffengine import finite_difference_gradient
from ticketlab.elastic import squeeze_ticket, stretch_ticket
from ticketlab.harness import compare_runs, parse_config, run
from ticketlab.harness.config import derive_seed
from ticketlab.harness.runner import CACHE_ENV, read_sigma, read_trace_csv
from ticketlab.hnn import ArchSpec, NetworkParams, ResidualKernel, TrainConfig, init_params, residual_loss
from ticketlab.integrator import rk4_solve
from ticketlab.pruner import Mask, PruneSchedule, Ticket, prune_step, rewind
from ticketlab.scaling import fit_power_law, segment_regimes
from ticketlab.systems import linear_oscillator, nonlinear_oscillator

CACHE = Path(os.environ.get(CACHE_ENV) or Path(__file__).resolve().parent.parent / ".ticketlab-cache")

# pinned tolerances
GRAD_REL_TOL = 1e-5
GRAD_STEP = 1e-6
GRAD_SECONDS = 10.0
RK4_TOL = 1e-6
ORDER, ORDER_TOL = 4.0, 0.2
EPS_TRAIN = 1e-2
DRIFT_FACTOR = 10.0
TRAIN_SECONDS = 300.0
PLATEAU_MIN_ITERS = 5
PLATEAU_FACTOR = 2.0
GAMMA_MIN, R2_MIN = 3.0, 0.9
GLOBAL_SECONDS = 2 * 3600.0
SIGMA2_MAX = 0.1
PROPERTY_CASES = 1000
TRANSFER_SPAN_RATIO = 0.5
TRANSFER_SECONDS = 3 * 3600.0
FIT_TOL = 1e-8

# the 1% comparison run is capped; its pre-floor transitions alone fix the signs
SLOW_RATE_ITERATIONS = 60
TRANSFER_EVERY = 2


def report(n: int, name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {name}: {detail}")
    assert ok, detail


def _run(tmp_path_factory, name, text="", **kw):
    kind = kw.pop("kind")
    cfg = parse_config(text, kind, seed=0)
    if kw:
        cfg = replace(cfg, **kw)
    return run(cfg, tmp_path_factory.mktemp(name), cache_dir=CACHE)


@pytest.fixture(scope="session")
def nlo_global(tmp_path_factory):
    return _run(tmp_path_factory, "nlo_global", kind="rg_observables")


@pytest.fixture(scope="session")
def hh_global(tmp_path_factory):
    return _run(tmp_path_factory, "hh_global", "[system]\nname = HH\n", kind="rg_observables")


@pytest.fixture(scope="session")
def nlo_global_slow(tmp_path_factory):
    text = f"[prune]\nrate = 0.01\nmax_iterations = {SLOW_RATE_ITERATIONS}\n"
    return _run(tmp_path_factory, "nlo_global_1pct", text, kind="rg_observables")


# -- 1 ----------------------------------------------------------------------------------

def test_c01_gradient_correctness():
    start = time.perf_counter()
    system = nonlinear_oscillator()
    arch = ArchSpec((50, 50), 2)
    params = init_params(arch, derive_seed(0, "init:NLO"))
    grid = TrainConfig().grid
    loss = residual_loss(params, None, system, grid)
    grad = loss.tape.reverse(loss)
    idx = np.sort(np.random.default_rng(0).choice(arch.n_params, 20, replace=False))
    # the finite-difference side evaluates the same loss with the vectorised forward pass
    kernel = ResidualKernel(arch, system, grid, None)
    assert kernel.loss(params.theta) == pytest.approx(loss.value, rel=1e-12)
    fd = finite_difference_gradient(kernel.loss, params.theta, step=GRAD_STEP, indices=idx)
    elapsed = time.perf_counter() - start
    rel = np.max(np.abs(grad[idx] - fd) / np.abs(fd))
    report(1, "gradient correctness", rel < GRAD_REL_TOL and elapsed < GRAD_SECONDS,
           f"max rel err {rel:.2e} (< {GRAD_REL_TOL:g}) over 20 params, {elapsed:.1f}s (< {GRAD_SECONDS:g}s)")


# -- 2 ----------------------------------------------------------------------------------

def _cosine_error(substeps, grid):
    traj = rk4_solve(linear_oscillator(), grid, substeps)
    exact = np.stack([np.cos(grid), -np.sin(grid)], axis=1)
    return float(np.max(np.abs(traj.states - exact)))


def test_c02_oracle_quality():
    err = _cosine_error(100, TrainConfig().grid)
    coarse = np.linspace(0, 4 * math.pi, 41)
    order = math.log2(_cosine_error(10, coarse) / _cosine_error(20, coarse))
    report(2, "RK4 oracle", err < RK4_TOL and abs(order - ORDER) <= ORDER_TOL,
           f"max cosine error {err:.2e} (< {RK4_TOL:g}), observed order {order:.3f} ({ORDER}±{ORDER_TOL})")


# -- 3 ----------------------------------------------------------------------------------

@pytest.fixture(scope="session")
def train_full(tmp_path_factory):
    return _run(tmp_path_factory, "train_full", kind="train_full")


def test_c03_trainability(train_full):
    s = train_full.summary
    scale = math.sqrt(s["final_loss"])
    ok = (s["epsilon"] < EPS_TRAIN and s["nn_energy_drift"] < DRIFT_FACTOR * scale
          and train_full.wall_clock < TRAIN_SECONDS)
    report(3, "trainability", ok,
           f"eps {s['epsilon']:.2e} (< {EPS_TRAIN:g}), NN energy drift {s['nn_energy_drift']:.2e} "
           f"(< {DRIFT_FACTOR:g} x sqrt(loss) = {DRIFT_FACTOR * scale:.2e}), {train_full.wall_clock:.0f}s")


# -- 4 ----------------------------------------------------------------------------------

def test_c04_three_regimes(nlo_global):
    trace = read_trace_csv(Path(nlo_global.out_dir) / "trace.csv")
    d, eps = trace["density"], trace["epsilon"]
    seg = segment_regimes(d, eps, PLATEAU_FACTOR)
    window = seg.power_window
    fit = fit_power_law(d, eps, window) if window and seg.power[1] - seg.power[0] >= 3 else None
    secs = nlo_global.summary["compute_seconds"]
    ok = (seg.n_low() >= PLATEAU_MIN_ITERS and fit is not None and fit.gamma > GAMMA_MIN and fit.r2 > R2_MIN
          and secs < GLOBAL_SECONDS)
    fit_txt = "no power-law window" if fit is None else (
        f"gamma {fit.gamma:.2f} (> {GAMMA_MIN:g}), R2 {fit.r2:.3f} (> {R2_MIN:g}) on d in "
        f"[{fit.window[0]:.3f}, {fit.window[1]:.3f}]")
    report(4, "three-regime shape", ok,
           f"plateau {seg.n_low()} iterations (>= {PLATEAU_MIN_ITERS}) at eps0 {eps[0]:.2e}; {fit_txt}; "
           f"{secs / 60:.0f} min")


# -- 5 ----------------------------------------------------------------------------------

@pytest.fixture(scope="session")
def layerwise(tmp_path_factory):
    return _run(tmp_path_factory, "layerwise", kind="imp_layerwise")


def test_c05_layer_ordering(layerwise):
    g = {int(k): v for k, v in layerwise.summary["gamma"].items()}
    ok = g[1] > g[2] and g[3] > g[2]
    report(5, "layer sensitivity ordering", ok,
           f"gamma_1 {g[1]:.3f}, gamma_2 {g[2]:.3f}, gamma_3 {g[3]:.3f}; need gamma_1 > gamma_2 < gamma_3")


# -- 6 ----------------------------------------------------------------------------------

def test_c06_sigma_pattern(nlo_global, hh_global, nlo_global_slow):
    runs = {"NLO 5%": nlo_global, "HH 5%": hh_global, "NLO 1%": nlo_global_slow}
    sig = {k: read_sigma(Path(m.out_dir) / "rgflow.csv") for k, m in runs.items()}
    each = {k: bool(s[0] > 0 and s[2] > 0 and abs(s[1]) < SIGMA2_MAX) for k, s in sig.items()}
    systems = compare_runs(nlo_global.out_dir, hh_global.out_dir).agree
    rates = compare_runs(nlo_global.out_dir, nlo_global_slow.out_dir).agree
    detail = "; ".join(f"{k} sigma = ({s[0]:+.3f}, {s[1]:+.3f}, {s[2]:+.3f})" for k, s in sig.items())
    report(6, "sigma sign pattern", all(each.values()) and systems and rates,
           f"{detail}; NLO/HH signs agree: {systems}; 5%/1% signs agree: {rates}")


# -- 7 ----------------------------------------------------------------------------------

@st.composite
def _prune_case(draw):
    arch = ArchSpec(tuple(draw(st.lists(st.integers(1, 8), min_size=1, max_size=2))), draw(st.integers(1, 4)))
    theta = np.array(draw(st.lists(st.floats(-3, 3, allow_nan=False), min_size=arch.n_params,
                                   max_size=arch.n_params)))
    bits = np.array(draw(st.lists(st.booleans(), min_size=arch.n_weights, max_size=arch.n_weights)))
    return arch, theta, Mask(arch, bits), draw(st.floats(0.01, 0.99)), draw(st.integers(0, 2**32 - 1))


def test_c07_mask_algebra():
    failures = []

    @settings(max_examples=PROPERTY_CASES, deadline=None, suppress_health_check=list(HealthCheck),
              database=None)
    @given(_prune_case())
    def check(case):
        arch, theta, mask, rate, seed = case
        sched = PruneSchedule("global", rate, floor=0.01)
        step = prune_step(theta, mask, sched)
        if not step.mask <= mask:
            failures.append("monotonicity")
        if not step.floor_bound and step.mask.count != mask.count - math.floor(rate * mask.count):
            failures.append("prune count")
        other = theta.copy()
        other[arch.n_weights:] = 0.0
        if prune_step(other, mask, sched).mask != step.mask or step.mask.bits.size != arch.n_weights:
            failures.append("bias exemption")
        p = init_params(arch, seed)
        trained = NetworkParams(arch, p.theta + theta, seed, p.init)
        if rewind(trained).theta.tobytes() != p.init.tobytes():
            failures.append("rewind fidelity")
        assert not failures

    try:
        check()
    except AssertionError:
        pass
    report(7, "mask algebra", not failures,
           f"{PROPERTY_CASES} random cases; violations: {sorted(set(failures)) or 'none'}")


# -- 8 ----------------------------------------------------------------------------------

def test_c08_elastic_round_trip():
    src, dst = ArchSpec((50, 50), 2), ArchSpec((50, 50), 4)
    init = init_params(src, 0).init
    bad = []

    @settings(max_examples=PROPERTY_CASES, deadline=None, database=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def check(seed, density):
        rng = np.random.default_rng(seed)
        t = Ticket(Mask(src, rng.random(src.n_weights) < density), init, src, seed)
        s = stretch_ticket(t, dst)
        if squeeze_ticket(s, src, drop=(3, 4)) != t:
            bad.append("round trip")
        if s.mask.layer_density()[2] != t.mask.layer_density()[2]:
            bad.append("layer-3 density")
        assert not bad

    try:
        check()
    except AssertionError:
        pass
    report(8, "elastic round trip", not bad,
           f"{PROPERTY_CASES} random masks; violations: {sorted(set(bad)) or 'none'}")


# -- 9 ----------------------------------------------------------------------------------

def _transfer(tmp_path_factory, kind):
    text = f"[transfer]\nt_max_sweep = 4pi\nevery = {TRANSFER_EVERY}\n"
    return _run(tmp_path_factory, kind, text, kind=kind)


def _transfer_check(manifest, native):
    rows = np.genfromtxt(Path(manifest.out_dir) / "transfer.csv", delimiter=",", names=True, dtype=None,
                         encoding="utf-8")
    ok = np.isfinite(rows["epsilon"])
    moved = segment_regimes(rows["source_density"][ok], rows["epsilon"][ok], PLATEAU_FACTOR)
    trace = read_trace_csv(Path(native.out_dir) / "trace.csv")
    home = segment_regimes(trace["density"], trace["epsilon"], PLATEAU_FACTOR)
    return moved.low_span(), home.low_span()


def test_c09_transfer(tmp_path_factory, nlo_global, hh_global):
    to_hh = _transfer(tmp_path_factory, "transfer_nlo_to_hh")
    to_nlo = _transfer(tmp_path_factory, "transfer_hh_to_nlo")
    a_moved, a_home = _transfer_check(to_hh, hh_global)
    b_moved, b_home = _transfer_check(to_nlo, nlo_global)
    secs = to_hh.summary["transfer_seconds"] + to_nlo.summary["transfer_seconds"]
    ok = (a_moved >= TRANSFER_SPAN_RATIO * a_home and b_moved >= TRANSFER_SPAN_RATIO * b_home
          and secs < TRANSFER_SECONDS)
    # a single-point native plateau makes its direction pass trivially; say so
    vacuous = [name for name, home in (("HH", a_home), ("NLO", b_home)) if home == 0.0]
    note = f"; native {' and '.join(vacuous)} plateau is a single point, that direction is vacuous" if vacuous else ""
    report(9, "transfer preservation", ok,
           f"NLO->HH plateau span {a_moved:.3f} vs native HH {a_home:.3f}; "
           f"HH->NLO {b_moved:.3f} vs native NLO {b_home:.3f} (need >= {TRANSFER_SPAN_RATIO:g}x); "
           f"retraining {secs / 60:.0f} min{note}")


# -- 10 ---------------------------------------------------------------------------------

TINY = """
[network]
hidden = 6, 6
[train]
epochs = 40
n_points = 20
[prune]
rate = 0.2
max_iterations = 6
[transfer]
t_max_sweep = 2pi, 4pi
every = 2
"""


def _csv_bytes(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_c10_determinism(tmp_path, train_full):
    mismatched = []
    kinds = ("train_full", "imp_global", "imp_layerwise", "rg_observables", "transfer_nlo_to_hh",
             "transfer_hh_to_nlo")
    for kind in kinds:
        cfg = parse_config(TINY, kind, seed=7)
        a, b = run(cfg, tmp_path / f"{kind}_a"), run(cfg, tmp_path / f"{kind}_b")
        if _csv_bytes(Path(a.out_dir)) != _csv_bytes(Path(b.out_dir)) or not _csv_bytes(Path(a.out_dir)):
            mismatched.append(kind)
    # one full-size run as well, against the copy made for criterion 3
    again = run(parse_config("", "train_full", seed=0), tmp_path / "full_again")
    if _csv_bytes(Path(train_full.out_dir)) != _csv_bytes(Path(again.out_dir)):
        mismatched.append("train_full (default)")
    report(10, "determinism", not mismatched,
           f"{len(kinds) + 1} experiments re-run; CSV mismatches: {mismatched or 'none'}")


# -- 11 ---------------------------------------------------------------------------------

def test_c11_fit_exactness():
    d = 0.85 ** np.arange(25)
    errs = {g: abs(fit_power_law(d, 0.037 * d ** -g).gamma - g) for g in (0.5, 3.0, 9.61)}
    worst = max(errs.values())
    report(11, "power-law fit exactness", worst < FIT_TOL,
           ", ".join(f"gamma {g}: |err| {e:.1e}" for g, e in errs.items()) + f" (< {FIT_TOL:g})")
