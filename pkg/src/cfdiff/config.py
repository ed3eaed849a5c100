"""Experiment configuration: flat ``key = value`` text with named presets.

Lines are ``key = value``; ``#`` starts a comment. Dotted keys group related
settings without nesting. A ``preset`` key selects the base values
(``desk-200`` by default, or ``paper-1000``); every other key overrides one
preset value. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .editing import METHODS, EditConfig
from .errors import ConfigError
from .phantom import PhantomParams
from .schedule import NoiseSchedule, build_schedule
from .tiny import OptimizerConfig


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _list(conv):
    def parse(s: str):
        s = s.strip()
        return tuple(conv(v.strip()) for v in s.split(",") if v.strip()) if s else ()
    return parse


_PARSERS = {int: int, float: float, str: str.strip, bool: _parse_bool,
            "ints": _list(int), "floats": _list(float), "strs": _list(str)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _phantom_keys():
    out = {}
    defaults = PhantomParams()
    for f in dataclasses.fields(PhantomParams):
        val = getattr(defaults, f.name)
        if isinstance(val, tuple):
            kind = "ints" if isinstance(val[0], int) else "floats"
        else:
            kind = type(val)
        out[f"phantom.{f.name}"] = (kind, val)
    return out


# key -> (type, desk-200 default)
KEYS: dict[str, tuple] = {
    "preset": (str, "desk-200"),
    "seed": (int, 0),
    "schedule.T": (int, 200),
    "schedule.beta_start": (float, 1e-4),
    "schedule.beta_end": (float, 0.02),
    "schedule.sigma_mode": (str, "ddpm"),
    **_phantom_keys(),
    "dataset.n_train": (int, 400),
    "dataset.n_test": (int, 50),
    "dataset.n_healthy": (int, 50),
    "dataset_dir": (str, ""),
    "denoiser": (str, "analytic"),
    "palette_denoiser": (str, "analytic"),
    "methods": ("strs", METHODS),
    "mededit.k": (int, 7),
    "mededit.U": (int, 4),
    "mededit.element": (str, "square"),
    "naive_repaint.U": (int, 3),
    "sdedit.encoding_ratio": (float, 0.2),
    "palette.k": (int, 7),
    "palette.mask": (str, "dilated"),
    "eval.size": (int, 50),
    "eval.seeds": ("ints", tuple(range(10))),
    "eval.projection_seed": (int, 0),
    "eval.gallery": (int, 4),
    "train.lr": (float, 1e-3),
    "train.momentum": (float, 0.9),
    "train.batch_size": (int, 16),
    "train.epochs": (int, 200),
    "train.hidden": (int, 12),
    "train.emb_dim": (int, 16),
    "train.palette": (bool, True),
    "sweep.k": ("ints", (1, 3, 7, 11)),
    "sweep.U": ("ints", (1, 2, 4)),
    "sweep.encoding_ratio": ("floats", (0.1, 0.2, 0.4)),
    "workers": (int, 0),
}

PRESETS: dict[str, dict] = {
    "desk-200": {},
    # Full-scale operating point: 128x128, T = 1000, k = 25; phantom geometry scaled 4x
    # (areas 16x, so the radius gain per 100 px drops 4x).
    "paper-1000": {
        "schedule.T": 1000,
        "phantom.size": 128,
        "phantom.brain_axes": (56.0, 52.0),
        "phantom.brain_axis_jitter": 4.0,
        "phantom.ventricle_offset": 18.0,
        "phantom.ventricle_radius": 8.0,
        "phantom.gain": 1.0,
        "phantom.lesion_area_range": (128, 960),
        "phantom.lesion_disk_radius": (6.0, 12.0),
        "dataset.n_train": 389,
        "dataset.n_test": 54,
        "dataset.n_healthy": 212,
        "eval.size": 54,
        "mededit.k": 25,
        "palette.k": 25,
        "train.epochs": 1500,
        "sweep.k": (1, 9, 25, 41),
    },
}


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        kind = KEYS[key][0]
        try:
            out[key] = _PARSERS[kind](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {e}") from None
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(repr=False)
    schedule: NoiseSchedule = field(repr=False)
    phantom: PhantomParams = field(repr=False)
    edits: dict = field(repr=False)
    optimizer: OptimizerConfig = field(repr=False)

    def __getitem__(self, key):
        return self.values[key]

    @property
    def methods(self) -> tuple[str, ...]:
        return self.values["methods"]

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.values["eval.seeds"]

    def to_text(self) -> str:
        """Canonical, fully-resolved form (sorted keys). Hashing this identifies the run."""
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def with_overrides(self, **kv) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in kv.items():
            key = k.replace("__", ".")
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = v
        return build_config(vals)

    def workers(self) -> int:
        n = self.values["workers"]
        if n <= 0:
            env = os.environ.get("CFD_THREADS", "")
            try:
                n = int(env) if env else 1
            except ValueError:
                raise ConfigError(f"CFD_THREADS must be an integer, got {env!r}") from None
        return max(1, n)


def resolve(overrides: dict) -> dict:
    preset = overrides.get("preset", KEYS["preset"][1])
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    vals = {k: v for k, (_, v) in KEYS.items()}
    vals.update(PRESETS[preset])
    vals.update(overrides)
    vals["preset"] = preset
    return vals


def build_config(values: dict) -> ExperimentConfig:
    """Validate every value up front; any problem raises ConfigError."""
    v = dict(values)
    unknown = set(v) - set(KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    schedule = build_schedule(v["schedule.T"], v["schedule.beta_start"], v["schedule.beta_end"],
                              v["schedule.sigma_mode"])
    try:
        phantom = PhantomParams(**{k.split(".", 1)[1]: val for k, val in v.items() if k.startswith("phantom.")})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"phantom: {e}") from None
    for m in v["methods"]:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; expected a subset of {METHODS}")
    if len(set(v["methods"])) != len(v["methods"]):
        raise ConfigError("methods list has duplicates")
    edits = {
        "mededit": EditConfig("mededit", k=v["mededit.k"], U=v["mededit.U"], element=v["mededit.element"]),
        "naive_repaint": EditConfig("naive_repaint", U=v["naive_repaint.U"]),
        "sdedit": EditConfig("sdedit", encoding_ratio=v["sdedit.encoding_ratio"]),
        "palette": EditConfig("palette", k=v["palette.k"], palette_mask=v["palette.mask"],
                              element=v["mededit.element"]),
    }
    for name in ("dataset.n_train", "dataset.n_test", "dataset.n_healthy", "eval.size"):
        if v[name] < 0:
            raise ConfigError(f"{name} must be >= 0, got {v[name]}")
    if not v["eval.seeds"]:
        raise ConfigError("eval.seeds must list at least one seed")
    for key in ("denoiser", "palette_denoiser"):
        d = v[key]
        if d != "analytic" and not d.startswith("trained:"):
            raise ConfigError(f"{key} must be 'analytic' or 'trained:<path>', got {d!r}")
    opt = OptimizerConfig(lr=v["train.lr"], momentum=v["train.momentum"], batch_size=v["train.batch_size"],
                          epochs=v["train.epochs"])
    if opt.lr < 0 or opt.batch_size < 1 or opt.epochs < 0 or not 0 <= opt.momentum < 1:
        raise ConfigError(f"invalid training settings {opt}")
    for k in v["sweep.k"]:
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"sweep.k values must be odd and >= 1, got {k}")
    if any(u < 1 for u in v["sweep.U"]):
        raise ConfigError("sweep.U values must be >= 1")
    if any(not 0 < r <= 1 for r in v["sweep.encoding_ratio"]):
        raise ConfigError("sweep.encoding_ratio values must be in (0, 1]")
    return ExperimentConfig(values=v, schedule=schedule, phantom=phantom, edits=edits, optimizer=opt)


def load_config(path=None, **overrides) -> ExperimentConfig:
    vals = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e}") from None
        vals = parse_text(text, str(p))
    for k, v in overrides.items():
        key = k.replace("__", ".")
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        vals[key] = v
    return build_config(resolve(vals))


def preset(name: str = "desk-200", **overrides) -> ExperimentConfig:
    return load_config(None, preset=name, **overrides)
