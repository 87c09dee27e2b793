"""Flat dotted-key run configuration, TOML IO and fingerprints."""
from __future__ import annotations

import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import PhantomSpec
from .fusion import FusionConfig
from .objectives import LossWeights
from .translate import DiffusionSchedule

DEFAULTS: dict[str, object] = {
    "run.seed": 0,
    "data.size": 64,
    "data.n_slices": 8,
    "data.split": "9,2,4",
    "data.noise_std": 0.02,
    "data.mr_bias": 0.05,
    "data.ct_bias": 0.02,
    "data.seed": 0,
    "fusion.width": 16,
    "fusion.n_pre_blocks": 1,
    "fusion.n_post_blocks": 1,
    "fusion.swap_period": 2,
    "fusion.theta_cdc": 0.7,
    "fusion.enable_mamba": True,
    "fusion.enable_de": True,
    "fusion.d_state": 8,
    "fusion.expand": 2,
    "fusion.bidirectional": True,
    "diffusion.T": 8,
    "diffusion.beta_min": 0.01,
    "diffusion.beta_max": 0.3,
    "model.resblocks": 3,
    "model.gen_width": 16,
    "model.unet_width": 16,
    "model.temb_dim": 8,
    "model.disc_width": 16,
    "loss.lambda_l1": 100.0,
    "loss.lambda_gan": 1.0,
    "loss.lambda_cycle": 10.0,
    "loss.adversarial": "bce",
    "optim.lr": 2e-4,
    "optim.beta1": 0.5,
    "optim.beta2": 0.999,
    "train.steps": 2000,
    "train.batch_size": 4,
    "input.drop": "none",
    "eval.seed": 0,
}

CHOICES = {
    "loss.adversarial": ("bce", "lsgan"),
    "input.drop": ("none", "t1", "t2"),
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        try:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {value!r}") from None
    value = str(value)
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key} must be one of {CHOICES[key]}, got {value!r}")
    return value


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


class RunConfig:
    """Every tunable as one flat ``{dotted.key: value}`` record; unknown keys are rejected."""

    def __init__(self, values: dict | None = None):
        self._v = dict(DEFAULTS)
        if values:
            self.update(values)

    def update(self, values: dict):
        for k, v in _flatten(values).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key {k!r}")
            self._v[k] = _coerce(k, v)
        self.validate()
        return self

    def with_overrides(self, **kv) -> "RunConfig":
        """Copy with ``{"fusion.width": 8}``-style overrides; keys use ``__`` for dots."""
        new = RunConfig(self._v)
        new.update({k.replace("__", "."): v for k, v in kv.items()})
        return new

    def __getitem__(self, key):
        return self._v[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._v == other._v

    def as_dict(self) -> dict:
        return dict(sorted(self._v.items()))

    def validate(self):
        # building the domain objects applies their own range checks
        try:
            self.fusion_config()
            self.schedule()
            self.loss_weights()
            self.phantom_spec()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if self["train.batch_size"] < 1 or self["train.steps"] < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.steps >= 0")
        if self["optim.lr"] < 0:
            raise ConfigError("optim.lr must be >= 0")

    def fingerprint(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # -- domain views ------------------------------------------------
    def fusion_config(self) -> FusionConfig:
        g = self._v
        return FusionConfig(width=g["fusion.width"], n_pre_blocks=g["fusion.n_pre_blocks"],
                            n_post_blocks=g["fusion.n_post_blocks"], swap_period=g["fusion.swap_period"],
                            theta_cdc=g["fusion.theta_cdc"], enable_mamba=g["fusion.enable_mamba"],
                            enable_de=g["fusion.enable_de"], d_state=g["fusion.d_state"],
                            expand=g["fusion.expand"], bidirectional=g["fusion.bidirectional"])

    def schedule(self) -> DiffusionSchedule:
        return DiffusionSchedule(self["diffusion.T"], self["diffusion.beta_min"], self["diffusion.beta_max"])

    def loss_weights(self) -> LossWeights:
        return LossWeights(self["loss.lambda_l1"], self["loss.lambda_gan"], self["loss.lambda_cycle"])

    def phantom_spec(self) -> PhantomSpec:
        try:
            split = tuple(int(s) for s in str(self["data.split"]).split(","))
        except ValueError:
            raise ValueError(f"data.split must look like '9,2,4', got {self['data.split']!r}") from None
        if len(split) != 3 or min(split) < 0 or split[0] < 1:
            raise ValueError(f"data.split needs three counts with >= 1 train subject, got {split}")
        return PhantomSpec(size=self["data.size"], n_slices=self["data.n_slices"], split=split,
                           noise_std=self["data.noise_std"], mr_bias=self["data.mr_bias"],
                           ct_bias=self["data.ct_bias"], seed=self["data.seed"])


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return json.dumps(v)


def dumps(cfg: RunConfig) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in cfg.as_dict().items())


def loads(text: str) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"bad config syntax: {e}") from None
    return RunConfig(raw)


def load(path: str, overrides: dict | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        cfg = loads(fh.read())
    if overrides:
        cfg.update(overrides)
    return cfg


def save(cfg: RunConfig, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` from a ``--set`` flag, value parsed as a TOML scalar when possible."""
    if "=" not in text:
        raise ConfigError(f"override must be key=value, got {text!r}")
    k, v = text.split("=", 1)
    k = k.strip()
    try:
        val = tomllib.loads(f"x = {v.strip()}")["x"]
    except tomllib.TOMLDecodeError:
        val = v.strip()
    return k, val
