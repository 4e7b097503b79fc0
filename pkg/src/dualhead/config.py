"""Run configuration: a sectioned ``key = value`` text file.

Every key has a parser and an accepted range; unknown sections or keys and
out-of-range values are rejected before any work starts.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError
from .model import ATTENTION_SOURCES, HEADS, ModelConfig
from .optim import OptimizerConfig

VARIANTS = ("single-coarse", "single-fine", "dual", "dual+ta", "dual+ta+sa", "self-attention")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(t) for t in s.replace(" ", "").split(",") if t)


def _schedule(s: str) -> list[tuple[int, float]]:
    out = []
    for item in s.replace(" ", "").split(","):
        if not item:
            continue
        epoch, div = item.split(":")
        out.append((int(epoch), float(div)))
    return out


def _names(s: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in s.split(",") if t.strip())


@dataclass(frozen=True)
class Key:
    default: str
    parse: Callable[[str], Any]
    check: Callable[[Any], bool]
    accepted: str


def _int_range(lo, hi=None):
    return lambda v: v >= lo and (hi is None or v <= hi)


def _real_range(lo, hi=None, lo_open=False, hi_open=False):
    def ok(v):
        if not math.isfinite(v):
            return False
        if v < lo or (lo_open and v == lo):
            return False
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return False
        return True
    return ok


def _odd_list(v):
    return len(v) > 0 and all(t >= 1 and t % 2 == 1 for t in v)


def _increasing(v):
    return len(v) > 0 and v[0] >= 1 and all(b > a for a, b in zip(v, v[1:]))


def _schedule_ok(v):
    return all(e >= 0 and d > 0 for e, d in v) and all(b[0] > a[0] for a, b in zip(v, v[1:]))


SCHEMA: dict[str, dict[str, Key]] = {
    "model": {
        "num_classes": Key("4", int, _int_range(2), "integer >= 2"),
        "in_channels": Key("3", int, _int_range(1), "integer >= 1"),
        "alpha": Key("2", int, _int_range(1), "integer >= 1"),
        "mu": Key("0.5", float, _real_range(0.0, 1.0), "real in [0, 1]"),
        "lambda": Key("1.0", float, _real_range(0.0, lo_open=True), "real > 0"),
        "scales": Key("4", int, _int_range(0, 16), "integer in [0, 16]"),
        "backbone_taus": Key("3,5", _ints, _odd_list, "comma list of odd integers >= 1"),
        "coarse_taus": Key("3", _ints, _odd_list, "comma list of odd integers >= 1"),
        "fine_taus": Key("3,5", _ints, _odd_list, "comma list of odd integers >= 1"),
        "backbone_channels": Key("64", int, _int_range(1), "integer >= 1"),
        "coarse_channels": Key("64", int, _int_range(1), "integer >= 1"),
        "fine_channels": Key("32", int, _int_range(1), "integer >= 1"),
        "tcn_kernel": Key("3", int, lambda v: v >= 1 and v % 2 == 1, "odd integer >= 1"),
        "tcn_dilations": Key("1,2", _ints, _increasing, "strictly increasing integers >= 1"),
        "attention_kernel": Key("9", int, lambda v: v >= 1 and v % 2 == 1, "odd integer >= 1"),
        "temporal_attention": Key("true", _bool, lambda v: True, "true | false"),
        "spatial_attention": Key("true", _bool, lambda v: True, "true | false"),
        "attention_source": Key("cross", str, lambda v: v in ATTENTION_SOURCES, " | ".join(ATTENTION_SOURCES)),
        "heads": Key("dual", str, lambda v: v in HEADS, " | ".join(HEADS)),
        "stages": Key("2", int, _int_range(1, 8), "integer in [1, 8]"),
        "batch_norm": Key("true", _bool, lambda v: True, "true | false"),
        "residual": Key("true", _bool, lambda v: True, "true | false"),
        "skeleton": Key("synthetic11", str, lambda v: bool(v), "bundled name (ntu25, synthetic11) or edge-list path"),
        "root_joint": Key("0", int, _int_range(0), "integer >= 0"),
    },
    "optim": {
        "lr": Key("0.1", float, _real_range(0.0, lo_open=True), "real > 0"),
        "momentum": Key("0.9", float, _real_range(0.0, 1.0, hi_open=True), "real in [0, 1)"),
        "nesterov": Key("true", _bool, lambda v: True, "true | false"),
        "weight_decay": Key("0.0005", float, _real_range(0.0), "real >= 0"),
        "schedule": Key("40:10,60:10", _schedule, _schedule_ok,
                        "comma list of epoch:divisor, epochs strictly increasing"),
        "epochs": Key("80", int, _int_range(1), "integer >= 1"),
        "batch_size": Key("64", int, _int_range(1), "integer >= 1"),
        "recalibrate_bn": Key("true", _bool, lambda v: True, "true | false"),
        "stop_at_train_acc": Key("0", float, _real_range(0.0, 1.0), "real in [0, 1]; 0 disables"),
    },
    "data": {
        "train_manifest": Key("", str, lambda v: True, "path (empty: <out>/train.manifest)"),
        "test_manifest": Key("", str, lambda v: True, "path (empty: <out>/test.manifest)"),
        "target_frames": Key("64", int, _int_range(1), "integer >= 1"),
        "modality": Key("joint", str, lambda v: v in ("joint", "bone", "joint_motion", "bone_motion"),
                        "joint | bone | joint_motion | bone_motion"),
        "num_coarse": Key("2", int, _int_range(1, 6), "integer in [1, 6]"),
        "fine_variants": Key("2", int, _int_range(1, 8), "integer in [1, 8]"),
        "per_class_train": Key("20", int, _int_range(1), "integer >= 1"),
        "per_class_test": Key("10", int, _int_range(0), "integer >= 0"),
        "frames": Key("64", int, _int_range(1), "integer >= 1"),
        "noise": Key("0.01", float, _real_range(0.0), "real >= 0"),
        "amp_jitter": Key("0.2", float, _real_range(0.0, 1.0, hi_open=True), "real in [0, 1)"),
        "shift_jitter": Key("0", int, _int_range(0), "integer >= 0"),
        "translate": Key("0.1", float, _real_range(0.0), "real >= 0"),
        "coarse_amp": Key("0.3", float, _real_range(0.0), "real >= 0"),
        "fine_amp": Key("0.05", float, _real_range(0.0), "real >= 0"),
        "fine_vary": Key("direction", str, lambda v: v in ("direction", "phase"), "direction | phase"),
    },
    "gradcheck": {
        "joints": Key("3", int, _int_range(1), "integer >= 1"),
        "frames": Key("8", int, _int_range(1), "integer >= 1"),
        "channels": Key("4", int, _int_range(2), "integer >= 2"),
        "classes": Key("2", int, _int_range(2), "integer >= 2"),
        "scales": Key("1", int, _int_range(0), "integer >= 0"),
        "batch": Key("2", int, _int_range(1), "integer >= 1"),
        "step": Key("1e-5", float, _real_range(0.0, lo_open=True), "real > 0"),
        "tolerance": Key("1e-4", float, _real_range(0.0, lo_open=True), "real > 0"),
    },
    "ablate": {
        "seeds": Key("5", int, _int_range(1), "integer >= 1"),
        "variants": Key(",".join(VARIANTS), _names, lambda v: len(v) > 0 and all(x in VARIANTS for x in v),
                        "comma list from " + ", ".join(VARIANTS)),
    },
    "run": {
        "seed": Key("7", int, _int_range(0, 2 ** 64 - 1), "unsigned 64-bit integer"),
    },
}


class RunConfig:
    """Validated configuration values, ``cfg[section][key]``."""

    def __init__(self, values: dict[str, dict[str, Any]]):
        self.values = values

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls.from_mapping({})

    @classmethod
    def from_mapping(cls, raw: dict[str, dict[str, str]]) -> "RunConfig":
        for section, keys in raw.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]; accepted: {', '.join(SCHEMA)}")
            for key in keys:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}; accepted: {', '.join(SCHEMA[section])}")
        values = {}
        for section, keys in SCHEMA.items():
            values[section] = {}
            for key, spec in keys.items():
                text = raw.get(section, {}).get(key, spec.default)
                try:
                    value = spec.parse(str(text))
                    ok = spec.check(value)
                except (ValueError, TypeError):
                    ok = False
                if not ok:
                    raise ConfigError(f"invalid value {text!r} for {section}.{key}; accepted: {spec.accepted}")
                values[section][key] = value
        d = values["data"]
        if d["fine_vary"] == "direction" and d["fine_variants"] > 3:
            raise ConfigError(f"invalid value {d['fine_variants']!r} for data.fine_variants; "
                              f"accepted: integer in [1, 3] when data.fine_vary = direction")
        return cls(values)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                           inline_comment_prefixes=("#",), strict=True)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_mapping({s: dict(parser[s]) for s in parser.sections()})

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def with_overrides(self, **sections) -> "RunConfig":
        raw = {s: {k: _format(v) for k, v in self.values[s].items()} for s in self.values}
        for section, kv in sections.items():
            for key, value in kv.items():
                raw.setdefault(section, {})[key] = _format(value)
        return RunConfig.from_mapping(raw)

    def to_text(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key, spec in keys.items():
                lines.append(f"# {spec.accepted}")
                lines.append(f"{key} = {_format(self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(
            num_classes=m["num_classes"], in_channels=m["in_channels"], alpha=m["alpha"], mu=m["mu"],
            lam=m["lambda"], scales=m["scales"], backbone_taus=m["backbone_taus"],
            coarse_taus=m["coarse_taus"], fine_taus=m["fine_taus"],
            backbone_channels=m["backbone_channels"], coarse_channels=m["coarse_channels"],
            fine_channels=m["fine_channels"], tcn_kernel=m["tcn_kernel"], tcn_dilations=m["tcn_dilations"],
            attention_kernel=m["attention_kernel"], temporal_attention=m["temporal_attention"],
            spatial_attention=m["spatial_attention"], attention_source=m["attention_source"],
            heads=m["heads"], stages=m["stages"], batch_norm=m["batch_norm"], residual=m["residual"])

    def optimizer_config(self) -> OptimizerConfig:
        o = self.values["optim"]
        return OptimizerConfig(learning_rate=o["lr"], momentum=o["momentum"], nesterov=o["nesterov"],
                               weight_decay=o["weight_decay"], lr_schedule=list(o["schedule"]))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{e}:{d:g}" for e, d in v)
        return ",".join(str(x) for x in v)
    return str(v)


def variant_overrides(variant: str) -> dict[str, Any]:
    """Model-section overrides realizing one ablation variant."""
    table = {
        "single-coarse": dict(heads="coarse"),
        "single-fine": dict(heads="fine"),
        "dual": dict(heads="dual", temporal_attention=False, spatial_attention=False),
        "dual+ta": dict(heads="dual", temporal_attention=True, spatial_attention=False),
        "dual+ta+sa": dict(heads="dual", temporal_attention=True, spatial_attention=True,
                           attention_source="cross"),
        "self-attention": dict(heads="dual", temporal_attention=True, spatial_attention=True,
                               attention_source="self"),
    }
    if variant not in table:
        raise ConfigError(f"unknown ablation variant {variant!r}; accepted: {', '.join(VARIANTS)}")
    return table[variant]
