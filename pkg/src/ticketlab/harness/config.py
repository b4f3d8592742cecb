"""Experiment configuration: INI text in, validated :class:`ExperimentConfig` out.

Sections and keys (all optional; defaults depend on the experiment kind)::

    [experiment]  kind, seed, out, parallelism, paper_fidelity
    [system]      name, initial_state
    [network]     hidden
    [train]       epochs, learning_rate, n_points, t_max, beta1, beta2, adam_eps,
                  ic_mode (ansatz | penalty), ic_weight
    [prune]       scope, rate, layer, layers, floor, max_iterations, rounding
    [transfer]    t_max_sweep, fresh_init, drop, every
    [fit]         plateau_factor, window
    [reference]   substeps

Lengths of time accept a ``pi`` suffix (``4pi``).  Lists are comma separated.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace

from ..hnn import IC_MODES, ArchSpec, TrainConfig
from ..pruner import ROUNDING, SCOPES, PruneSchedule
from ..systems import get_system

KINDS = ("train_full", "imp_layerwise", "imp_global", "rg_observables", "transfer_nlo_to_hh", "transfer_hh_to_nlo")

PAPER_EPOCHS = 50_000


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    system: str = "NLO"
    initial_state: tuple[float, ...] | None = None
    hidden: tuple[int, ...] = (50, 50)
    train: TrainConfig = field(default_factory=TrainConfig)
    prune: PruneSchedule = field(default_factory=PruneSchedule)
    layers: tuple[int, ...] = (1, 2, 3)
    seed: int = 0
    out: str | None = None
    parallelism: int = 1
    paper_fidelity: bool = False
    t_max_sweep: tuple[float, ...] = (2 * math.pi, 4 * math.pi, 6 * math.pi, 8 * math.pi)
    fresh_init: bool = False
    drop: tuple[int, ...] = (2, 4)
    transfer_every: int = 1
    plateau_factor: float = 2.0
    fit_window: tuple[float, float] | None = None
    substeps: int = 100

    @property
    def source_system(self) -> str:
        if self.kind == "transfer_nlo_to_hh":
            return "NLO"
        if self.kind == "transfer_hh_to_nlo":
            return "HH"
        return self.system

    @property
    def target_system(self) -> str | None:
        return {"transfer_nlo_to_hh": "HH", "transfer_hh_to_nlo": "NLO"}.get(self.kind)

    def system_spec(self, name: str | None = None):
        name = name or self.source_system
        ic = self.initial_state if name == self.source_system else None
        return get_system(name, ic)

    def arch(self, name: str | None = None) -> ArchSpec:
        return ArchSpec(self.hidden, self.system_spec(name).dim)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"]["betas"] = list(self.train.betas)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict() | {"out": None, "parallelism": None}, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        """Fully resolved configuration text; parsing it back gives an equal config."""
        t, p = self.train, self.prune
        lines = [
            "[experiment]", f"kind = {self.kind}", f"seed = {self.seed}",
            f"parallelism = {self.parallelism}", f"paper_fidelity = {str(self.paper_fidelity).lower()}",
            "", "[system]", f"name = {self.system}",
        ]
        if self.out is not None:
            lines.insert(4, f"out = {self.out}")
        if self.initial_state is not None:
            lines.append("initial_state = " + ", ".join(repr(v) for v in self.initial_state))
        lines += ["", "[network]", "hidden = " + ", ".join(str(h) for h in self.hidden),
                  "", "[train]", f"epochs = {t.epochs}", f"learning_rate = {t.learning_rate!r}",
                  f"n_points = {t.n_points}", f"t_max = {t.t_max!r}", f"beta1 = {t.betas[0]!r}",
                  f"beta2 = {t.betas[1]!r}", f"adam_eps = {t.adam_eps!r}",
                  f"ic_mode = {t.ic_mode}", f"ic_weight = {t.ic_weight!r}",
                  "", "[prune]", f"scope = {p.scope}", f"rate = {p.rate!r}", f"floor = {p.floor!r}",
                  f"max_iterations = {p.max_iterations}", f"rounding = {p.rounding}",
                  "layers = " + ", ".join(str(v) for v in self.layers)]
        if p.layer is not None:
            lines.append(f"layer = {p.layer}")
        lines += ["", "[transfer]", "t_max_sweep = " + ", ".join(repr(v) for v in self.t_max_sweep),
                  f"fresh_init = {str(self.fresh_init).lower()}", "drop = " + ", ".join(str(v) for v in self.drop),
                  f"every = {self.transfer_every}",
                  "", "[fit]", f"plateau_factor = {self.plateau_factor!r}"]
        if self.fit_window is not None:
            lines.append(f"window = {self.fit_window[0]!r}, {self.fit_window[1]!r}")
        lines += ["", "[reference]", f"substeps = {self.substeps}", ""]
        return "\n".join(lines)


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Stable 63-bit seed for one randomised quantity of a run.

    ``label`` names the quantity (``"init:NLO"`` for the NLO network's
    initial weights); ``index`` distinguishes repeated runs.
    """
    digest = hashlib.sha256(f"{int(seed)}|{label}|{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


# -- parsing -----------------------------------------------------------------------

_SCHEMA = {
    "experiment": {"kind", "seed", "out", "parallelism", "paper_fidelity"},
    "system": {"name", "initial_state"},
    "network": {"hidden"},
    "train": {"epochs", "learning_rate", "n_points", "t_max", "beta1", "beta2", "adam_eps", "ic_mode", "ic_weight"},
    "prune": {"scope", "rate", "layer", "layers", "floor", "max_iterations", "rounding"},
    "transfer": {"t_max_sweep", "fresh_init", "drop", "every"},
    "fit": {"plateau_factor", "window"},
    "reference": {"substeps"},
}

_PI = re.compile(r"^\s*([-+0-9.eE]*)\s*\*?\s*pi\s*$")


def _real(text: str) -> float:
    m = _PI.match(text)
    if m:
        coef = m.group(1)
        return (float(coef) if coef not in ("", "+") else 1.0) * math.pi
    return float(text)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str, conv) -> tuple:
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    return tuple(conv(s) for s in items)


def _line_index(text: str) -> dict[tuple[str, str], int]:
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            where.setdefault((section, ""), n)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        where[(section, key)] = n
    return where


def defaults_for(kind: str, paper_fidelity: bool = False) -> ExperimentConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}")
    train = TrainConfig(epochs=PAPER_EPOCHS if paper_fidelity else TrainConfig().epochs)
    if kind == "imp_layerwise":
        prune = PruneSchedule(scope="single_layer", layer=1, rate=0.01 if paper_fidelity else 0.05,
                              floor=0.10, rounding="at_least_one", max_iterations=400)
    elif kind == "train_full":
        prune = PruneSchedule(max_iterations=0)
    else:
        prune = PruneSchedule(scope="global", rate=0.05, floor=0.05, max_iterations=200)
    return ExperimentConfig(kind=kind, train=train, prune=prune, paper_fidelity=paper_fidelity)


def parse_config(text: str, kind: str | None = None, **overrides) -> ExperimentConfig:
    """Parse INI text into a validated config with every default filled in.

    ``kind`` (and keyword ``overrides`` such as ``seed``/``out``) take
    precedence over the text.  Errors carry the offending line number.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from None
    where = _line_index(text)

    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", where.get((section, "")))
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", where.get((section, key)))

    def get(section, key, conv, default=None):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {key}: {exc}", where.get((section, key))) from None

    def check(ok: bool, section: str, key: str, message: str):
        if not ok:
            raise ConfigError(f"[{section}] {key}: {message}", where.get((section, key)))

    kind = kind or get("experiment", "kind", str.strip)
    if kind is None:
        raise ConfigError("experiment kind not given")
    paper = overrides.pop("paper_fidelity", None)
    if paper is None:
        paper = get("experiment", "paper_fidelity", _bool, False)
    try:
        cfg = defaults_for(kind, bool(paper))
    except ConfigError as exc:
        raise ConfigError(str(exc), where.get(("experiment", "kind"))) from None

    seed = get("experiment", "seed", int, cfg.seed)
    out = get("experiment", "out", str.strip, cfg.out)
    par = get("experiment", "parallelism", int, cfg.parallelism)
    check(par >= 1, "experiment", "parallelism", "must be >= 1")

    system = get("system", "name", lambda s: s.strip().upper(), cfg.system)
    check(system in ("NLO", "HH"), "system", "name", "must be NLO or HH")
    ic = get("system", "initial_state", lambda s: _list(s, float), cfg.initial_state)
    hidden = get("network", "hidden", lambda s: _list(s, int), cfg.hidden)
    check(len(hidden) >= 1 and min(hidden) >= 1, "network", "hidden", "widths must be positive")

    t0 = cfg.train
    epochs = get("train", "epochs", int, t0.epochs)
    check(epochs >= 0, "train", "epochs", "must be >= 0")
    lr = get("train", "learning_rate", float, t0.learning_rate)
    check(lr > 0, "train", "learning_rate", "must be > 0")
    n_points = get("train", "n_points", int, t0.n_points)
    check(n_points >= 2, "train", "n_points", "must be >= 2")
    t_max = get("train", "t_max", _real, t0.t_max)
    check(t_max > 0, "train", "t_max", "must be > 0")
    b1 = get("train", "beta1", float, t0.betas[0])
    check(0 <= b1 < 1, "train", "beta1", "must lie in [0, 1)")
    b2 = get("train", "beta2", float, t0.betas[1])
    check(0 <= b2 < 1, "train", "beta2", "must lie in [0, 1)")
    aeps = get("train", "adam_eps", float, t0.adam_eps)
    check(aeps > 0, "train", "adam_eps", "must be > 0")
    ic_mode = get("train", "ic_mode", str.strip, t0.ic_mode)
    check(ic_mode in IC_MODES, "train", "ic_mode", f"must be one of {IC_MODES}")
    ic_weight = get("train", "ic_weight", float, t0.ic_weight)
    check(ic_weight > 0, "train", "ic_weight", "must be > 0")

    p0 = cfg.prune
    scope = get("prune", "scope", str.strip, p0.scope)
    check(scope in SCOPES, "prune", "scope", f"must be one of {SCOPES}")
    rate = get("prune", "rate", float, p0.rate)
    check(0 < rate < 1, "prune", "rate", "must lie in (0, 1)")
    floor = get("prune", "floor", float, p0.floor if scope == p0.scope else None)
    check(floor is None or 0 < floor < 1, "prune", "floor", "must lie in (0, 1)")
    max_it = get("prune", "max_iterations", int, p0.max_iterations)
    check(max_it >= 0, "prune", "max_iterations", "must be >= 0")
    rounding = get("prune", "rounding", str.strip, p0.rounding)
    check(rounding in ROUNDING, "prune", "rounding", f"must be one of {ROUNDING}")
    layers = get("prune", "layers", lambda s: _list(s, int), cfg.layers)
    n_layers = len(hidden) + 1
    check(all(1 <= v <= n_layers for v in layers), "prune", "layers", f"must lie in 1..{n_layers}")
    layer = get("prune", "layer", int, p0.layer if scope == "single_layer" else None)
    if scope == "single_layer":
        layer = layer or layers[0]
        check(1 <= layer <= n_layers, "prune", "layer", f"must lie in 1..{n_layers}")

    sweep = get("transfer", "t_max_sweep", lambda s: _list(s, _real), cfg.t_max_sweep)
    check(len(sweep) > 0 and min(sweep) > 0, "transfer", "t_max_sweep", "must be positive")
    fresh = get("transfer", "fresh_init", _bool, cfg.fresh_init)
    drop = get("transfer", "drop", lambda s: _list(s, int), cfg.drop)
    every = get("transfer", "every", int, cfg.transfer_every)
    check(every >= 1, "transfer", "every", "must be >= 1")
    factor = get("fit", "plateau_factor", float, cfg.plateau_factor)
    check(factor > 1, "fit", "plateau_factor", "must exceed 1")
    window = get("fit", "window", lambda s: _list(s, float), cfg.fit_window)
    if window is not None:
        check(len(window) == 2 and min(window) > 0, "fit", "window", "needs two positive densities")
    substeps = get("reference", "substeps", int, cfg.substeps)
    check(substeps >= 1, "reference", "substeps", "must be >= 1")

    try:
        spec = get_system(system, ic)
    except ValueError as exc:
        raise ConfigError(str(exc), where.get(("system", "initial_state"))) from None

    cfg = replace(
        cfg, system=spec.name, initial_state=ic, hidden=hidden, seed=seed, out=out, parallelism=par,
        train=TrainConfig(epochs, lr, n_points, t_max, (b1, b2), aeps, ic_mode=ic_mode, ic_weight=ic_weight),
        prune=PruneSchedule(scope=scope, rate=rate, layer=layer, floor=floor, max_iterations=max_it, rounding=rounding),
        layers=layers, t_max_sweep=sweep, fresh_init=fresh, drop=drop, transfer_every=every,
        plateau_factor=factor, fit_window=window, substeps=substeps,
    )
    for key, value in overrides.items():
        if value is not None:
            cfg = replace(cfg, **{key: value})
    return cfg
