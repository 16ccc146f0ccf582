"""Run configuration: a flat ``section.key = value`` text file.

Example::

    # arousal run
    data.target = arousal
    constraint.p = 0.75
    constraint.q = 0.15
    train.epochs = 60

Blank lines and ``#`` comments are ignored.  Unknown keys are errors, and
each value is parsed with the type of its default.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .constraints import ConstraintConfig
from .labels import FitGrid, WindowConfig
from .ode import SolveConfig
from .synth import SynthSpec
from .training import LossConfig, TrainConfig

WINDOW_BY_TARGET = {"arousal": 6, "valence": 1}

_SECTIONS = {
    "constraint": ConstraintConfig,
    "solve": SolveConfig,
    "train": TrainConfig,
    "loss": LossConfig,
    "grid": FitGrid,
    "synth": SynthSpec,
}

# keys that do not map onto one of the dataclasses above
_EXTRA = {
    "seed": 0,
    "model.d_in": 0,  # 0: take it from the feature files
    "model.hidden": 64,
    "model.final_scale": 0.1,
    "window.F": -1,  # -1: use the target's default half-width
    "label.prior": "kde",
    "data.target": "arousal",
    "data.delay_s": 4.0,
    "predict.method": "dopri5",
    "eval.smooth_frames": 12,
}


class ConfigError(ValueError):
    pass


def defaults() -> dict:
    out = {}
    for sec, cls in _SECTIONS.items():
        for f in fields(cls):
            if (sec, f.name) != ("train", "seed"):
                out[f"{sec}.{f.name}"] = f.default
    out.update(_EXTRA)
    return out


def _coerce(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


class RunConfig:
    """All run settings as one flat mapping with typed accessors."""

    def __init__(self, values: dict | None = None):
        self.values = defaults()
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key, value):
        if key not in self.values:
            raise ConfigError(f"unknown configuration key {key!r}")
        default = self.values[key]
        self.values[key] = _coerce(key, value, default) if isinstance(value, str) else value

    def update_from_lines(self, lines, source="<overrides>"):
        for i, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{i}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{source}:{i}: {exc}") from None
        return self

    @classmethod
    def load(cls, path=None, overrides=()):
        cfg = cls()
        if path is not None:
            path = Path(path)
            cfg.update_from_lines(path.read_text().splitlines(), str(path))
        cfg.update_from_lines(overrides, "--set")
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name) -> dict:
        pre = name + "."
        return {k[len(pre):]: v for k, v in self.values.items() if k.startswith(pre)}

    def validate(self):
        # constructing each dataclass runs its own checks (e.g. the q bound)
        try:
            self.constraint(), self.solve(), self.train(), self.loss(), self.window(), self.grid(), self.synth()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self["data.target"] not in WINDOW_BY_TARGET:
            raise ConfigError(f"data.target must be one of {sorted(WINDOW_BY_TARGET)}")
        if self["label.prior"] not in ("kde", "uniform"):
            raise ConfigError("label.prior must be 'kde' or 'uniform'")
        if self["predict.method"] not in ("rk4_fixed", "dopri5"):
            raise ConfigError("predict.method must be 'rk4_fixed' or 'dopri5'")

    def constraint(self, mode=None) -> ConstraintConfig:
        kw = self.section("constraint")
        if mode is not None:
            kw["mode"] = mode
        return ConstraintConfig(**kw)

    def solve(self) -> SolveConfig:
        return SolveConfig(**self.section("solve"))

    def predict_solve(self) -> SolveConfig:
        kw = self.section("solve")
        kw["method"] = self["predict.method"]
        return SolveConfig(**kw)

    def train(self) -> TrainConfig:
        kw = self.section("train")
        kw["seed"] = self["seed"]
        return TrainConfig(**kw)

    def synth(self) -> SynthSpec:
        return SynthSpec(**self.section("synth"))

    def loss(self) -> LossConfig:
        return LossConfig(**self.section("loss"))

    def grid(self) -> FitGrid:
        return FitGrid(**self.section("grid"))

    def window(self) -> WindowConfig:
        F = self["window.F"]
        return WindowConfig(WINDOW_BY_TARGET[self["data.target"]] if F < 0 else F)

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in sorted(self.values.items()))
