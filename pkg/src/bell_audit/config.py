"""
Run configuration: a flat `key = value` file with `#` comments.

Values are resolved as built-in defaults, then the file, then command-line
overrides. When no path is given, $BELL_AUDIT_CONFIG is used if set.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .adversaries import AdversaryConfig, AdversaryKind, Placement, QuantumModel, chsh_optimal_angles
from .core import PredictabilityMode, SettingsProfile
from .errors import ValidationError
from .martingale import IncrementKind, IncrementSpec
from .rng import RngSeed
from .spacetime import SPEED_OF_LIGHT, SpacetimeConfig

logger = logging.getLogger(__name__)

CONFIG_ENV = "BELL_AUDIT_CONFIG"
_SECTION = "bell-audit"

_ALPHA1, _ALPHA2, _BETA1, _BETA2 = chsh_optimal_angles()


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse_optional(text: str):
        if text.strip().lower() in ("", "none", "null"):
            return None
        return parse(text)
    return parse_optional


def _integer(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


# key -> (group, parser, default)
KEYS: dict[str, tuple[str, Callable[[str], Any], Any]] = {
    # model
    "r": ("model", float, 1.0),
    "alpha1": ("model", float, _ALPHA1),
    "alpha2": ("model", float, _ALPHA2),
    "beta1": ("model", float, _BETA1),
    "beta2": ("model", float, _BETA2),
    "etaA": ("model", float, 1.0),
    "etaB": ("model", float, 1.0),
    "visibility": ("model", float, 1.0),
    "pDark": ("model", float, 0.0),
    # settings
    "kappaA": ("settings", float, 0.0),
    "kappaB": ("settings", float, 0.0),
    "epsA": ("settings", float, 0.0),
    "epsB": ("settings", float, 0.0),
    "mode": ("settings", str, PredictabilityMode.COMMUNICATION.value),
    "qf": ("settings", float, 0.0),
    "guard": ("settings", float, 0.0),
    # adversary
    "adversary": ("adversary", _optional(str), None),
    "strategy": ("adversary", _optional(_integer), None),
    "placement": ("adversary", str, Placement.BERNOULLI.value),
    # run
    "seed": ("run", _integer, 0),
    "stream": ("run", _integer, 0),
    "trials": ("run", _integer, 1_000_000),
    "workers": ("run", _integer, 1),
    "kind": ("run", str, IncrementKind.SHIFTED.value),
    "s": ("run", _optional(_integer), None),
    "alpha": ("run", float, 1e-6),
    "p_epsilon": ("run", _optional(float), None),
    # planner
    "rate": ("planner", float, 1e6),
    "J": ("planner", float, 1e-6),
    "epsAB": ("planner", _optional(float), None),
    "c": ("planner", float, 20.0),
    "f": ("planner", float, 2e-5),
    "range": ("planner", float, 8.0),
    # optimizer
    "eta": ("optimizer", float, 1.0),
    "fixed_r": ("optimizer", _optional(float), None),
    "tol": ("optimizer", float, 0.005),
    "starts": ("optimizer", _integer, 32),
    "sweep_start": ("optimizer", float, 0.60),
    "sweep_stop": ("optimizer", float, 1.0),
    "sweep_step": ("optimizer", float, 0.05),
    # spacetime
    "d": ("spacetime", float, 30_000.0),
    "n": ("spacetime", float, 1.5),
    "tauG": ("spacetime", float, 0.0),
    "tauM": ("spacetime", float, 0.0),
    "tauS": ("spacetime", float, 0.0),
    "tauD": ("spacetime", float, 0.0),
    "c0": ("spacetime", float, SPEED_OF_LIGHT),
}


def defaults() -> dict:
    return {key: default for key, (_, _, default) in KEYS.items()}


def parse_value(key: str, text: Union[str, Any]) -> Any:
    """Type a raw value for `key`; non-string values pass through unchanged."""
    if key not in KEYS:
        raise ValidationError(f"Unknown configuration key: {key}")
    if not isinstance(text, str):
        return text
    _, parse, _ = KEYS[key]
    try:
        return parse(text.strip())
    except ValueError as exc:
        raise ValidationError(f"Invalid value for {key}: {text!r} ({exc})") from None


def read_config_file(path: Union[str, Path]) -> dict:
    """
    Parse a flat config file.

    Raises:
        ValidationError: On unknown keys, duplicates or unparsable values
        OSError: If the file cannot be read
    """
    parser = configparser.ConfigParser(
        comment_prefixes=("#",),
        inline_comment_prefixes=("#",),
        delimiters=("=",),
        interpolation=None,
    )
    parser.optionxform = str
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        parser.read_string(f"[{_SECTION}]\n{text}", source=str(path))
    except configparser.Error as exc:
        raise ValidationError(f"Malformed config file {path}: {exc}") from None
    return {key: parse_value(key, raw) for key, raw in parser.items(_SECTION)}


def resolve_config_path(path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Explicit path, else $BELL_AUDIT_CONFIG, else None."""
    if path:
        return Path(path)
    env = os.environ.get(CONFIG_ENV)
    return Path(env) if env else None


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> dict:
    """
    Resolve the configuration: defaults < file < overrides.

    Args:
        path: Config file path (falls back to $BELL_AUDIT_CONFIG)
        overrides: Values from the command line; None entries are ignored

    Returns:
        Dict with every known key
    """
    values = defaults()
    resolved = resolve_config_path(path)
    if resolved is not None:
        values.update(read_config_file(resolved))
        logger.debug("Loaded config from %s", resolved)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = parse_value(key, value)
    return values


def parse_assignments(items: Optional[list[str]]) -> dict:
    """Turn ['key=value', ...] into a dict of raw values."""
    result = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"Expected key=value, got {item!r}")
        key = key.strip()
        if key not in KEYS:
            raise ValidationError(f"Unknown configuration key: {key}")
        result[key] = value
    return result


@dataclass(frozen=True)
class RunConfig:
    """A resolved invocation: command, paths and every configuration value."""
    command: str
    config_path: Optional[Path] = None
    input_path: Optional[Path] = None
    output_path: Optional[Path] = None
    values: dict = field(default_factory=defaults)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_path": str(self.config_path) if self.config_path else None,
            "input_path": str(self.input_path) if self.input_path else None,
            "output_path": str(self.output_path) if self.output_path else None,
            "values": dict(self.values),
        }


# ===== Builders =====

def build_model(values: dict) -> QuantumModel:
    return QuantumModel(**{key: values[key] for key in (
        "r", "alpha1", "alpha2", "beta1", "beta2", "etaA", "etaB", "visibility", "pDark"
    )})


def build_profile(values: dict) -> SettingsProfile:
    return SettingsProfile(
        kappaA=values["kappaA"],
        kappaB=values["kappaB"],
        epsA=values["epsA"],
        epsB=values["epsB"],
        mode=values["mode"],
        qf=values["qf"],
    )


def build_source(values: dict) -> Union[AdversaryConfig, QuantumModel]:
    """The adversary named by `adversary`, or the quantum model when unset."""
    if values["adversary"] in (None, "quantum"):
        return build_model(values)
    return AdversaryConfig(
        kind=AdversaryKind.parse(values["adversary"]),
        profile=build_profile(values),
        base_strategy=values["strategy"],
        placement=values["placement"],
    )


def build_seed(values: dict) -> RngSeed:
    return RngSeed(seed=values["seed"], stream=values["stream"])


def build_spec(values: dict) -> IncrementSpec:
    return IncrementSpec.from_profile(build_profile(values), values["kind"], values["guard"])


def build_spacetime(values: dict) -> SpacetimeConfig:
    return SpacetimeConfig(**{key: values[key] for key in ("d", "n", "tauG", "tauM", "tauS", "tauD", "c0")})
