"""Experiment configuration: INI files with one section per module.

Every task has a complete default; a config file only needs the keys it
changes. Prior, operator and nonlinear sections are kept as string maps and
parsed when the task is built, so ``to_ini`` reproduces them verbatim.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError
from ..guidance import GuidanceSpec
from ..nonlinear import GNConfig

TASKS = (
    "sr",
    "gaussian-deblur",
    "motion-deblur",
    "identity-denoise",
    "gmm-1d",
    "gmm-2d",
    "nonlinear-toy",
)
IMAGE_TASKS = ("sr", "gaussian-deblur", "motion-deblur")
FILE_KEYS = ("kernel_file", "matrix_file")

_IMAGE_PRIOR = {"kind": "gaussian", "dim": "256", "mean": "0", "var": "0.25"}

_TASK_DEFAULTS = {
    "identity-denoise": dict(
        sigma_y=0.05,
        chains=256,
        prior={"kind": "gaussian", "dim": "16", "mean": "0", "var": "1"},
        operator={"kind": "identity"},
    ),
    "gaussian-deblur": dict(
        sigma_y=0.05,
        chains=64,
        prior=_IMAGE_PRIOR,
        operator={"kind": "gaussian-blur", "shape": "16,16", "size": "5", "std": "10"},
    ),
    "motion-deblur": dict(
        sigma_y=0.05,
        chains=64,
        prior=_IMAGE_PRIOR,
        operator={"kind": "motion-blur", "shape": "16,16", "size": "9", "length": "7", "angle": "30"},
    ),
    "sr": dict(
        sigma_y=0.05,
        chains=64,
        prior=_IMAGE_PRIOR,
        operator={"kind": "sr-bicubic", "shape": "16,16", "factor": "4", "gram": "fft"},
    ),
    # gain 0.3: effective noise sigma_y / 0.3 is comparable to the component
    # widths, so the mixture shapes the posterior
    "gmm-1d": dict(
        sigma_y=0.1,
        chains=2000,
        prior={"kind": "gmm", "weights": "0.3, 0.7", "means": "-1.5; 1.0", "variances": "0.25, 0.16"},
        operator={"kind": "dense", "matrix": "0.3"},
    ),
    "gmm-2d": dict(
        sigma_y=0.1,
        chains=2000,
        prior={"kind": "gmm", "weights": "0.5, 0.5", "means": "-1, -1; 1, 1", "variances": "0.2, 0.2"},
        operator={"kind": "dense", "matrix": "0.5, 0.2"},
    ),
    "nonlinear-toy": dict(
        sigma_y=0.1,
        chains=256,
        prior={"kind": "gaussian", "dim": "8", "mean": "0", "var": "1"},
        operator={"kind": "identity"},
        nonlinear={"kind": "tanh", "a": "0.5", "b": "1"},
        g_kind="dps",
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    seed: int = 0
    chains: int = 256
    jobs: int = 1
    out: str | None = None
    sigma_y: float = 0.05
    clip_x0: float | None = None
    traj_chains: int = 1
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 100
    eta: float = 1.0
    guidance: GuidanceSpec | None = field(default_factory=GuidanceSpec)
    prior: dict = field(default_factory=dict)
    operator: dict = field(default_factory=dict)
    nonlinear: dict | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.chains < 1 or self.jobs < 1 or self.steps < 1:
            raise ConfigurationError("chains, jobs and steps must be >= 1")
        if self.sigma_y < 0:
            raise ConfigurationError("sigma_y must be >= 0")
        if self.traj_chains < 0:
            raise ConfigurationError("traj_chains must be >= 0")
        for key in FILE_KEYS:
            path = self.operator.get(key)
            if path is not None and not Path(path).is_file():
                raise ConfigurationError(f"operator {key} {path!r} does not exist")

    @property
    def is_image(self) -> bool:
        return self.task in IMAGE_TASKS

    @property
    def effective_sigma_y(self) -> float:
        """Image tasks state sigma_y for [0, 1] pixels; signals live in [-1, 1]."""
        return 2.0 * self.sigma_y if self.is_image else self.sigma_y

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def default_config(task: str, **overrides) -> ExperimentConfig:
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}; choose from {', '.join(TASKS)}")
    d = dict(_TASK_DEFAULTS[task])
    g_kind = d.pop("g_kind", "pgdm")
    d["prior"] = dict(d["prior"])
    d["operator"] = dict(d["operator"])
    if "nonlinear" in d:
        d["nonlinear"] = dict(d["nonlinear"])
    d["guidance"] = GuidanceSpec(g_kind=g_kind)
    d.update(overrides)
    return ExperimentConfig(task=task, **d)


# -- INI parsing -------------------------------------------------------------

_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _bool(s):
    try:
        return _BOOL[s.strip().lower()]
    except KeyError:
        raise ConfigurationError(f"expected a boolean, got {s!r}") from None


def _opt_float(s):
    s = s.strip().lower()
    return None if s in ("", "none") else float(s)


_EXPERIMENT_KEYS = {
    "task": str,
    "seed": int,
    "chains": int,
    "jobs": int,
    "out": str,
    "sigma_y": float,
    "clip_x0": _opt_float,
    "traj_chains": int,
}
_SCHEDULE_KEYS = {"T": int, "beta_start": float, "beta_end": float, "steps": int, "eta": float}
_GUIDANCE_KEYS = ("enabled", "g_kind", "d_kind", "xi_mode", "normalize_g", "allow_negative_xi")
_GN_KEYS = {"gn_iterations": ("iterations", int), "gn_damping": ("damping", float)}


def _convert(section, key, value, table):
    try:
        return table[key](value)
    except KeyError:
        raise ConfigurationError(f"[{section}] unknown key {key!r}") from None
    except ValueError as exc:
        raise ConfigurationError(f"[{section}] {key}: {exc}") from exc


def _guidance_from(items: dict, gn: GNConfig, base: GuidanceSpec | None):
    if "enabled" in items and not _bool(items["enabled"]):
        return None
    base = base or GuidanceSpec()
    kw = {
        "g_kind": items.get("g_kind", base.g_kind),
        "d_kind": items.get("d_kind", base.d_kind),
        "normalize_g": _bool(items["normalize_g"]) if "normalize_g" in items else base.normalize_g,
        "allow_negative_xi": _bool(items["allow_negative_xi"])
        if "allow_negative_xi" in items
        else base.allow_negative_xi,
        "gn": gn,
    }
    if "xi_mode" in items:
        return GuidanceSpec.from_mode(items["xi_mode"].strip(), **kw)
    return GuidanceSpec(xi_mode=base.xi_mode, xi_value=base.xi_value, **kw)


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse INI text; relative file paths resolve against ``base_dir``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    known = {"experiment", "schedule", "sampler", "guidance", "prior", "operator", "nonlinear"}
    for name in cp.sections():
        if name not in known:
            raise ConfigurationError(f"unknown config section [{name}]")
    if not cp.has_option("experiment", "task"):
        raise ConfigurationError("[experiment] task is required")
    cfg = default_config(cp.get("experiment", "task").strip())
    changes = {}
    for key, value in cp.items("experiment") if cp.has_section("experiment") else []:
        changes[key] = _convert("experiment", key, value.strip(), _EXPERIMENT_KEYS)
    for sec in ("schedule", "sampler"):
        if cp.has_section(sec):
            for key, value in cp.items(sec):
                changes[key] = _convert(sec, key, value.strip(), _SCHEDULE_KEYS)

    gn_kw = {}
    nonlinear = dict(cfg.nonlinear) if cfg.nonlinear is not None else None
    if cp.has_section("nonlinear"):
        raw = {k: v.strip() for k, v in cp.items("nonlinear")}
        for key, (name, conv) in _GN_KEYS.items():
            if key in raw:
                gn_kw[name] = conv(raw.pop(key))
        if raw:
            if "kind" in raw and (nonlinear is None or raw["kind"] != nonlinear.get("kind")):
                nonlinear = {}
            if nonlinear is None:
                raise ConfigurationError("[nonlinear] needs a kind")
            nonlinear.update(raw)
            if nonlinear.get("kind", "none") == "none":
                nonlinear = None
    changes["nonlinear"] = nonlinear
    base_gn = cfg.guidance.gn if cfg.guidance is not None else GNConfig()
    gn = dataclasses.replace(base_gn, **gn_kw)

    if cp.has_section("guidance"):
        items = {k: v.strip() for k, v in cp.items("guidance")}
        for key in items:
            if key not in _GUIDANCE_KEYS:
                raise ConfigurationError(f"[guidance] unknown key {key!r}")
        changes["guidance"] = _guidance_from(items, gn, cfg.guidance)
    elif cfg.guidance is not None:
        changes["guidance"] = dataclasses.replace(cfg.guidance, gn=gn)

    for sec in ("prior", "operator"):
        if cp.has_section(sec):
            raw = {k: v.strip() for k, v in cp.items(sec)}
            current = dict(getattr(cfg, sec))
            if "kind" in raw and raw["kind"] != current.get("kind"):
                current = {}
            current.update(raw)
            if sec == "operator" and base_dir is not None:
                for key in FILE_KEYS:
                    if key in current and not Path(current[key]).is_absolute():
                        current[key] = str(Path(base_dir) / current[key])
            changes[sec] = current
    try:
        return cfg.replace(**changes)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def to_ini(cfg: ExperimentConfig) -> str:
    """Serialize so that ``parse_config(to_ini(c)) == c``."""
    lines = ["[experiment]"]
    for key in _EXPERIMENT_KEYS:
        value = getattr(cfg, key)
        if value is None:
            if key == "out":
                continue
            value = "none"
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    lines.append("")
    lines.append("[schedule]")
    for key in _SCHEDULE_KEYS:
        value = getattr(cfg, key)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    lines.append("")
    lines.append("[guidance]")
    g = cfg.guidance
    if g is None:
        lines.append("enabled = false")
    else:
        mode = "adaptive" if g.xi_mode == "adaptive" else f"{g.xi_mode}:{g.xi_value!r}"
        lines += [
            "enabled = true",
            f"g_kind = {g.g_kind}",
            f"d_kind = {g.d_kind}",
            f"xi_mode = {mode}",
            f"normalize_g = {str(g.normalize_g).lower()}",
            f"allow_negative_xi = {str(g.allow_negative_xi).lower()}",
        ]
    for sec in ("prior", "operator"):
        lines.append("")
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in getattr(cfg, sec).items()]
    lines.append("")
    lines.append("[nonlinear]")
    gn = g.gn if g is not None else GNConfig()
    lines.append(f"gn_iterations = {gn.iterations}")
    lines.append(f"gn_damping = {gn.damping!r}")
    if cfg.nonlinear is None:
        lines.append("kind = none")
    else:
        lines += [f"{k} = {v}" for k, v in cfg.nonlinear.items()]
    return "\n".join(lines) + "\n"
