"""
Timing budgets for space-like separation in a symmetric fiber layout.

The source sits midway between the two parties, each a fiber distance d
away. Setting generation (tauS) and generation plus deployment
(tauS + tauD) must fit within the budgets returned by `tau_limits`.
"""

import logging
from dataclasses import dataclass

from .errors import ValidationError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class SpacetimeConfig:
    d: float
    n: float = 1.5
    tauG: float = 0.0
    tauM: float = 0.0
    tauS: float = 0.0
    tauD: float = 0.0
    c0: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if not self.d > 0:
            raise ValidationError(f"d must be positive, got {self.d}")
        if not 1.0 < self.n < 3.0:
            raise ValidationError(f"n must lie in (1, 3), got {self.n}")
        for name in ("tauG", "tauM", "tauS", "tauD"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not self.c0 > 0:
            raise ValidationError(f"c0 must be positive, got {self.c0}")

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "tauG": self.tauG,
            "tauM": self.tauM,
            "tauS": self.tauS,
            "tauD": self.tauD,
            "c0": self.c0,
        }


def tau_limits(config: SpacetimeConfig) -> dict:
    """
    Budgets for setting generation (tau1) and generation plus deployment (tau2).

    Negative budgets are returned as they are.
    """
    light = config.d / config.c0
    return {
        "tau1": (3.0 - config.n) * light - (config.tauG + config.tauM),
        "tau2": 2.0 * light - config.tauM,
    }


def validate_geometry(config: SpacetimeConfig) -> dict:
    """
    Check both timing constraints (strict inequalities).

    Returns:
        Dict with feasible, the limits, every constraint with its margin in
        seconds, and the violated subset
    """
    limits = tau_limits(config)
    constraints = [
        {
            "constraint": "tauS < tau1",
            "value": config.tauS,
            "limit": limits["tau1"],
            "margin": limits["tau1"] - config.tauS,
        },
        {
            "constraint": "tauS + tauD < tau2",
            "value": config.tauS + config.tauD,
            "limit": limits["tau2"],
            "margin": limits["tau2"] - (config.tauS + config.tauD),
        },
    ]
    violated = [c for c in constraints if not c["value"] < c["limit"]]
    if violated:
        logger.info("Geometry infeasible: %s", ", ".join(c["constraint"] for c in violated))
    return {
        "feasible": not violated,
        "tau1": limits["tau1"],
        "tau2": limits["tau2"],
        "constraints": constraints,
        "violated": [{"constraint": c["constraint"], "margin": c["margin"]} for c in violated],
    }


def feasibility_table(config: SpacetimeConfig) -> list[str]:
    """Human-readable rows for the feasibility report."""
    report = validate_geometry(config)
    rows = [f"{'constraint':<20}{'value [s]':>16}{'limit [s]':>16}{'margin [s]':>16}  status"]
    for c in report["constraints"]:
        status = "ok" if c["value"] < c["limit"] else "VIOLATED"
        rows.append(
            f"{c['constraint']:<20}{c['value']:>16.6e}{c['limit']:>16.6e}{c['margin']:>16.6e}  {status}"
        )
    rows.append(f"feasible: {'yes' if report['feasible'] else 'no'}")
    return rows
