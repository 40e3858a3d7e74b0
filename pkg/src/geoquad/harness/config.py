"""Declarative experiment configuration.

A config is a TOML document. Top-level keys pick the experiment kind and
run settings; the ``[model]``, ``[pulse]``, ``[solver]``, ``[noise]`` and
``[output]`` tables and the ``[[axes]]`` array fill in the rest. Anything
left out falls back to the defaults registered for the chosen kind, so a
file containing only ``kind = "fig7_optimal_time"`` is a complete config.
"""

from dataclasses import asdict, dataclass, replace
import copy
import hashlib
import json
import math
import os

import numpy as np

from ..exceptions import ConfigError
from ..models import MODEL_NAMES

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

KINDS = (
    "fig2_two_level",
    "fig3_6x6",
    "fig5_grids",
    "fig6_quasistatic",
    "fig7_optimal_time",
    "fig8_miscal",
    "pop_trace",
    "custom",
)
SPACINGS = ("linear", "log")
ANGULAR_FACTORS = {"1": 1.0, "2pi": 2 * math.pi}
FORMATS = ("csv", "json", "svg")


@dataclass(frozen=True)
class Axis:
    """One grid axis, given either as a range or as explicit ``values``."""

    name: str
    min: float = None
    max: float = None
    count: int = None
    spacing: str = "linear"
    values: tuple = None

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise ConfigError("axis needs a non-empty name")
        if self.values is not None:
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ConfigError(f"axis {self.name!r}: values must not be empty")
            if not all(math.isfinite(v) for v in vals):
                raise ConfigError(f"axis {self.name!r}: values must be finite")
            object.__setattr__(self, "values", vals)
            return
        if self.min is None or self.max is None or self.count is None:
            raise ConfigError(f"axis {self.name!r} needs min, max and count (or values)")
        if self.spacing not in SPACINGS:
            raise ConfigError(f"axis {self.name!r}: spacing must be one of {SPACINGS}")
        if int(self.count) != self.count:
            raise ConfigError(f"axis {self.name!r}: count must be an integer")
        if self.count < 2 and not (self.count == 1 and self.min == self.max):
            raise ConfigError(f"axis {self.name!r}: count must be at least 2")
        if self.spacing == "log" and not (self.min > 0 and self.max > 0):
            raise ConfigError(f"axis {self.name!r}: log spacing needs positive bounds")

    def grid(self):
        if self.values is not None:
            return np.array(self.values)
        if self.spacing == "log":
            return np.geomspace(self.min, self.max, int(self.count))
        return np.linspace(self.min, self.max, int(self.count))

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: str
    params: dict
    protocols: tuple
    axes: tuple
    eps0: float
    eps_f: float
    t_f: float = 20.0
    level: int = 0
    pulse_model: str = None
    steps: int = 20000
    max_dt: float = None
    samples: int = 20001
    step_rule: str = "magnus4"
    record_every: int = 100
    t2: tuple = ()
    dephasing: str = "A"
    noise_mode: str = "resynthesize"
    sigma: float = 0.0
    noise_samples: int = 0
    seed: int = 0
    angular_factor: str = "1"
    threads: int = None
    out_dir: str = "results"
    stem: str = None
    formats: tuple = FORMATS

    @property
    def factor(self):
        return ANGULAR_FACTORS[self.angular_factor]

    @property
    def name(self):
        return self.stem or self.kind

    def axis(self, name):
        for ax in self.axes:
            if ax.name == name:
                return ax
        return None

    def steps_for(self, t_f):
        """Step count for pulse time ``t_f``: ``steps``, or fewer if ``max_dt`` allows."""
        if self.max_dt is None:
            return self.steps
        return int(min(self.steps, max(200, math.ceil(t_f / self.max_dt))))

    def to_dict(self):
        d = asdict(self)
        d["axes"] = [ax.to_dict() for ax in self.axes]
        for k in ("protocols", "t2", "formats"):
            d[k] = list(d[k])
        d["params"] = dict(sorted(self.params.items()))
        return d

    def digest(self):
        """SHA-256 of the canonical JSON echo, excluding output placement."""
        d = self.to_dict()
        for k in ("out_dir", "threads", "formats"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        if not kw:
            return self
        return validate(replace(self, **kw))


_DQD3 = {"u_tilde": 100.0, "omega": 1.0, "de_z": 1.0}
_TF7 = [float(t) for t in range(1, 20)] + [float(t) for t in range(20, 51, 5)]

DEFAULTS = {
    "fig2_two_level": dict(
        model="pauli", params={"z": 0.1, "phi": 0.0}, protocols=("linear", "geometric", "analytic"),
        eps0=-10.0, eps_f=10.0,
        axes=(Axis("t_f", 1.0, 50.0, 50),),
    ),
    "fig3_6x6": dict(
        model="dqd6", pulse_model="dqd6_truncated",
        params={"u_tilde": 100.0, "omega": 10.0, "de_z": 1.0, "e_z": 10.0, "de_x": 0.1},
        protocols=("linear", "geometric"), eps0=150.0, eps_f=10.0,
        axes=(Axis("t_f", 1.0, 200.0, 16, "log"),),
    ),
    "fig5_grids": dict(
        model="dqd3", params=dict(_DQD3), protocols=("geometric", "linear"),
        eps0=200.0, eps_f=0.0, t_f=20.0,
        axes=(Axis("de_z", 0.5, 5.0, 8, "log"), Axis("omega", 0.5, 5.0, 8, "log")),
    ),
    "fig6_quasistatic": dict(
        model="dqd3", params={"u_tilde": 100.0, "omega": 3.0, "de_z": 0.5}, protocols=("geometric",),
        eps0=200.0, eps_f=0.0, t_f=20.0,
        axes=(Axis("delta_eps", -5.0, 5.0, 11),),
    ),
    "fig7_optimal_time": dict(
        model="dqd3", params=dict(_DQD3), protocols=("geometric", "linear"),
        eps0=200.0, eps_f=0.0, max_dt=50.0 / 20000,
        axes=(Axis("t2", 1.0, 1000.0, 7, "log"), Axis("t_f", values=tuple(_TF7))),
    ),
    "fig8_miscal": dict(
        model="dqd3", params={"u_tilde": 100.0, "omega": 3.0, "de_z": 0.5}, protocols=("geometric",),
        eps0=200.0, eps_f=0.0,
        axes=(Axis("t_f", 5.0, 50.0, 10), Axis("delta_omega", -1.0, 1.0, 9)),
    ),
    "pop_trace": dict(
        model="dqd3", params=dict(_DQD3), protocols=("linear", "geometric"),
        eps0=200.0, eps_f=0.0, t_f=10.0, t2=(1.0, 10.0, 1000.0),
        axes=(),
    ),
    "custom": dict(
        model="dqd3", params=dict(_DQD3), protocols=("geometric", "linear"),
        eps0=200.0, eps_f=0.0, axes=(Axis("t_f", 1.0, 50.0, 10, "log"),),
    ),
}

# axis names understood besides model parameters
AXIS_NAMES = {"t_f", "t2", "delta_eps", "delta_omega", "eps"}
PROTOCOL_NAMES = ("linear", "geometric", "historical", "analytic", "sw_closed_form")
_MODEL_KEYS = {"u_tilde", "omega", "de_z", "e_z", "de_x", "z", "phi"}


def _flatten(doc):
    """Map the sectioned TOML layout onto ``ExperimentConfig`` field names."""
    doc = copy.deepcopy(doc)
    out = {}
    for key in ("kind", "seed", "angular_factor", "threads"):
        if key in doc:
            out[key] = doc.pop(key)
    model = doc.pop("model", {})
    if isinstance(model, str):
        model = {"name": model}
    if "name" in model:
        out["model"] = model.pop("name")
    if "pulse_model" in model:
        out["pulse_model"] = model.pop("pulse_model")
    if model:
        out["params"] = model
    pulse = doc.pop("pulse", {})
    for alias, key in (("epsilon0", "eps0"), ("epsilon_f", "eps_f")):
        if alias in pulse:
            if key in pulse:
                raise ConfigError(f"give either {alias} or {key}, not both")
            pulse[key] = pulse.pop(alias)
    for key in ("protocols", "eps0", "eps_f", "t_f", "level"):
        if key in pulse:
            out[key] = pulse.pop(key)
    solver = doc.pop("solver", {})
    for key in ("steps", "max_dt", "samples", "step_rule", "record_every"):
        if key in solver:
            out[key] = solver.pop(key)
    noise = doc.pop("noise", {})
    for src, dst in (("t2", "t2"), ("dephasing", "dephasing"), ("mode", "noise_mode"),
                     ("sigma", "sigma"), ("samples", "noise_samples")):
        if src in noise:
            out[dst] = noise.pop(src)
    output = doc.pop("output", {})
    for src, dst in (("dir", "out_dir"), ("stem", "stem"), ("formats", "formats")):
        if src in output:
            out[dst] = output.pop(src)
    if "axes" in doc:
        out["axes"] = doc.pop("axes")
    leftovers = {k: v for k, v in [("pulse", pulse), ("solver", solver), ("noise", noise),
                                     ("output", output)] if v}
    leftovers.update(doc)
    if leftovers:
        raise ConfigError(f"unrecognised config keys: {sorted(_keys(leftovers))}")
    return out


def _keys(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict) and v:
            yield from _keys(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}"


def _as_axis(a):
    if isinstance(a, Axis):
        return a
    if not isinstance(a, dict):
        raise ConfigError(f"axis entries must be tables, got {a!r}")
    unknown = set(a) - {"name", "min", "max", "count", "spacing", "values"}
    if unknown:
        raise ConfigError(f"unknown axis keys {sorted(unknown)}")
    try:
        return Axis(**a)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def from_mapping(doc):
    """Build a validated config from a parsed TOML mapping."""
    flat = _flatten(doc)
    kind = flat.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    base = dict(DEFAULTS[kind])
    if "params" in flat and flat.get("model", base["model"]) == base["model"]:
        merged = dict(base["params"])
        merged.update(flat["params"])
        flat["params"] = merged
    base.update(flat)
    if "axes" in base:
        base["axes"] = tuple(_as_axis(a) for a in base["axes"])
    for key in ("protocols", "t2", "formats"):
        if key in base:
            base[key] = tuple(base[key])
    if "angular_factor" in base:
        base["angular_factor"] = str(base["angular_factor"])
    try:
        cfg = ExperimentConfig(**base)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return validate(cfg)


def validate(cfg):
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown kind {cfg.kind!r}")
    for m in (cfg.model, cfg.pulse_model):
        if m is not None and m not in MODEL_NAMES:
            raise ConfigError(f"unknown model {m!r}; choose from {MODEL_NAMES}")
    unknown = set(cfg.params) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model parameters {sorted(unknown)}")
    for k, v in cfg.params.items():
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"model parameter {k} must be a finite number")
    if cfg.model != "pauli":
        needed = {"omega", "de_z"} | ({"u_tilde"} if cfg.model != "sw2" else set())
        missing = needed - set(cfg.params)
        swept = {ax.name for ax in cfg.axes}
        if missing - swept:
            raise ConfigError(f"model {cfg.model} is missing parameters {sorted(missing - swept)}")
    if not cfg.protocols:
        raise ConfigError("at least one protocol is required")
    for p in cfg.protocols:
        if p not in PROTOCOL_NAMES:
            raise ConfigError(f"unknown protocol {p!r}; choose from {PROTOCOL_NAMES}")
    if "analytic" in cfg.protocols and cfg.model != "pauli":
        raise ConfigError("the analytic protocol exists only for the pauli model")
    if "sw_closed_form" in cfg.protocols and (cfg.pulse_model or cfg.model) != "sw2":
        raise ConfigError("the sw_closed_form protocol is defined on the sw2 model")
    names = [ax.name for ax in cfg.axes]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate axis names in {names}")
    for n in names:
        if n not in AXIS_NAMES and n not in _MODEL_KEYS:
            raise ConfigError(f"axis {n!r} is neither a model parameter nor one of {sorted(AXIS_NAMES)}")
    for key in ("steps", "samples", "record_every"):
        if int(getattr(cfg, key)) < 2 and key != "record_every":
            raise ConfigError(f"{key} must be at least 2")
        if int(getattr(cfg, key)) < 1:
            raise ConfigError(f"{key} must be positive")
    if not cfg.t_f > 0:
        raise ConfigError("t_f must be positive")
    if cfg.max_dt is not None and not cfg.max_dt > 0:
        raise ConfigError("max_dt must be positive")
    if cfg.step_rule not in ("magnus4", "midpoint"):
        raise ConfigError(f"unknown step rule {cfg.step_rule!r}")
    if cfg.dephasing not in ("A", "B"):
        raise ConfigError("dephasing variant must be A or B")
    if cfg.noise_mode not in ("resynthesize", "additive"):
        raise ConfigError("noise mode must be resynthesize or additive")
    if cfg.angular_factor not in ANGULAR_FACTORS:
        raise ConfigError(f"angular_factor must be one of {sorted(ANGULAR_FACTORS)}")
    if cfg.threads is not None and int(cfg.threads) < 1:
        raise ConfigError("threads must be at least 1")
    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for t2 in cfg.t2:
        if not t2 > 0:
            raise ConfigError("T2 values must be positive")
    for f in cfg.formats:
        if f not in FORMATS:
            raise ConfigError(f"unknown output format {f!r}")
    if cfg.kind == "fig7_optimal_time":
        if cfg.axis("t_f") is None or cfg.axis("t2") is None:
            raise ConfigError("fig7_optimal_time needs t2 and t_f axes")
        tf = cfg.axis("t_f").grid()
        if np.any(tf <= 0) or np.any(tf > 50):
            raise ConfigError("optimal-time search needs t_f within (0, 50] ns")
    return cfg


def load_config(path):
    """Parse and validate a TOML config file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return from_mapping(doc)


def check_writable(directory):
    """Create ``directory`` if needed and make sure it accepts files."""
    try:
        os.makedirs(directory, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {directory}: {exc.strerror}") from None
    if not os.access(directory, os.W_OK):
        raise ConfigError(f"output directory {directory} is not writable")
