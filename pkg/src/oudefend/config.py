"""Plain-text configuration: `key = value` lines under bracketed sections.

Files are parsed with configparser (hash comments allowed); values support
ints, floats, pixel fractions like ``4/255``, and comma lists. The same
format is echoed into checkpoints so a model can be rebuilt from its file
alone. Command-line flags override file values.
"""

from __future__ import annotations

import configparser
from typing import Optional

from .attacks import AttackConfig, Framing, MultAvLinf, PgdL2, PgdLinf, Roa, Spa, desk_attack_configs
from .data import DatasetSpec
from .errors import ConfigError
from .models import BackboneConfig, OUDefendConfig
from .training import TrainConfig


def parse_number(text: str) -> float:
    """Parse a float that may be written as a fraction, e.g. '4/255'."""
    s = str(text).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"bad numeric value {text!r}: {e}")
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"bad numeric value {text!r}")


def parse_config_text(text: str) -> dict:
    """Sectioned key/value mapping from config-file text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}")
    return {section: dict(cp.items(section)) for section in cp.sections()}


def read_config_file(path) -> dict:
    with open(path, "r") as fh:
        return parse_config_text(fh.read())


def _get(section: dict, key: str, cast, default):
    if key not in section:
        return default
    return cast(section[key])


def _int(v):
    return int(str(v).strip())


def dataset_from_section(section: dict) -> DatasetSpec:
    base = DatasetSpec()
    return DatasetSpec(
        num_train=_get(section, "num_train", _int, base.num_train),
        num_test=_get(section, "num_test", _int, base.num_test),
        frames=_get(section, "frames", _int, base.frames),
        height=_get(section, "height", _int, base.height),
        width=_get(section, "width", _int, base.width),
        square=_get(section, "square", _int, base.square),
        speed=_get(section, "speed", _int, base.speed),
        noise_std=_get(section, "noise_std", parse_number, base.noise_std),
        seed=_get(section, "seed", _int, base.seed),
    )


def backbone_from_section(section: dict) -> BackboneConfig:
    base = BackboneConfig()
    widths = section.get("widths")
    return BackboneConfig(
        widths=tuple(int(w) for w in widths.split(",")) if widths else base.widths,
        num_classes=_get(section, "num_classes", _int, base.num_classes),
        insert_after=section.get("insert_after", base.insert_after),
        in_channels=_get(section, "in_channels", _int, base.in_channels),
    )


def oudefend_from_section(section: dict, in_channels: Optional[int] = None) -> OUDefendConfig:
    ic = _get(section, "in_channels", _int, in_channels)
    if ic is None:
        raise ConfigError("[oudefend] section needs in_channels")
    return OUDefendConfig(
        in_channels=ic,
        reduce_ratio=_get(section, "reduce_ratio", _int, 8),
        o_depth=_get(section, "o_depth", _int, 3),
        u_depth=_get(section, "u_depth", _int, 1),
        scale=_get(section, "scale", _int, 2),
        fusion=section.get("fusion", "add"),
        branch_mode=section.get("branch_mode", "full"),
    )


def model_config_text(bcfg: BackboneConfig, ocfg: Optional[OUDefendConfig]) -> str:
    """Deterministic config echo sufficient to rebuild the model."""
    lines = [
        "[backbone]",
        "widths = " + ",".join(str(w) for w in bcfg.widths),
        f"num_classes = {bcfg.num_classes}",
        f"insert_after = {bcfg.insert_after}",
        f"in_channels = {bcfg.in_channels}",
    ]
    if ocfg is not None:
        lines += [
            "",
            "[oudefend]",
            f"in_channels = {ocfg.in_channels}",
            f"reduce_ratio = {ocfg.reduce_ratio}",
            f"o_depth = {ocfg.o_depth}",
            f"u_depth = {ocfg.u_depth}",
            f"scale = {ocfg.scale}",
            f"fusion = {ocfg.fusion}",
            f"branch_mode = {ocfg.branch_mode}",
        ]
    return "\n".join(lines) + "\n"


def model_config_from_text(text: str):
    """Inverse of model_config_text: (BackboneConfig, OUDefendConfig|None)."""
    sections = parse_config_text(text)
    if "backbone" not in sections:
        raise ConfigError("model config needs a [backbone] section")
    bcfg = backbone_from_section(sections["backbone"])
    ocfg = None
    if "oudefend" in sections:
        width = bcfg.stage_width(bcfg.insert_after) if bcfg.insert_after != "none" else None
        ocfg = oudefend_from_section(sections["oudefend"], width)
    return bcfg, ocfg


ATTACK_FIELD_CASTS = {
    "eps": parse_number, "alpha": parse_number, "steps": _int,
    "eps_m": parse_number, "alpha_m": parse_number,
    "rect_h": _int, "rect_w": _int, "search_stride": _int,
    "width": _int, "pixels_per_frame": _int,
}


def attack_from_options(name: str, options: dict) -> AttackConfig:
    """Build an attack config from its name plus field overrides.

    Unset fields fall back to the desk defaults for that attack. Values may
    be strings (parsed per field) or already-typed numbers.
    """
    name = name.strip().lower()
    desk = desk_attack_configs()
    if name not in desk:
        raise ConfigError(f"unknown attack {name!r}; choose from {sorted(desk)}")
    base = desk[name]
    cls = type(base)
    kwargs = {}
    for fname in cls.__dataclass_fields__:
        if fname in options and options[fname] is not None:
            val = options[fname]
            kwargs[fname] = ATTACK_FIELD_CASTS[fname](val) if isinstance(val, str) else val
        else:
            kwargs[fname] = getattr(base, fname)
    return cls(**kwargs)


def train_from_section(section: dict) -> TrainConfig:
    base = TrainConfig()
    return TrainConfig(
        epochs=_get(section, "epochs", _int, base.epochs),
        batch_size=_get(section, "batch_size", _int, base.batch_size),
        lr=_get(section, "lr", parse_number, base.lr),
        momentum=_get(section, "momentum", parse_number, base.momentum),
        weight_decay=_get(section, "weight_decay", parse_number, base.weight_decay),
        seed=_get(section, "seed", _int, base.seed),
        mode=section.get("mode", base.mode),
        train_attack=None,
    )
