"""
Domain types and CH/Eberhard inequality evaluation.

Counts and probability tables are numpy arrays with axes (A, B, i, j):
the two outcome axes are indexed by the outcome value (1 = '+',
0 = undetected, 2 = '-' in three-outcome tables) and the two setting
axes by the setting index (0 = first, 1 = second).
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from typing import Optional, Union

import numpy as np

from .errors import (
    BracketError,
    DegenerateDenominatorError,
    InsufficientDataError,
    ValidationError,
)

logger = logging.getLogger(__name__)

# Normalisation tolerance for probability tables
NORM_TOL = 1e-9


class Setting(IntEnum):
    """Measurement setting of one party (a1/a2 or b1/b2)."""
    FIRST = 1
    SECOND = 2

    @property
    def index(self) -> int:
        """Array index of the setting (0 or 1)."""
        return self.value - 1


class Outcome(IntEnum):
    """One-detector-per-side fate: '+' or undetected ('-' merged into 0)."""
    UNDETECTED = 0
    PLUS = 1

    @property
    def symbol(self) -> str:
        return "+" if self is Outcome.PLUS else "0"


class Fate(IntEnum):
    """Three-outcome fate used only by the full Eberhard expressions."""
    UNDETECTED = 0
    PLUS = 1
    MINUS = 2


class PredictabilityMode(Enum):
    """How the setting-generator imperfection is modelled."""
    COMMUNICATION = "communication-fraction"
    EXCESS = "excess-predictability"
    BEYOND_HALF = "beyond-half"

    @classmethod
    def parse(cls, value: Union[str, "PredictabilityMode"]) -> "PredictabilityMode":
        if isinstance(value, cls):
            return value
        for mode in cls:
            if mode.value == value or mode.name.lower() == str(value).lower():
                return mode
        raise ValidationError(f"Unknown predictability mode: {value!r}")


@dataclass(frozen=True)
class TrialRecord:
    """One measurement trial: settings and one outcome per side."""
    index: int
    a: Setting
    b: Setting
    A: Outcome
    B: Outcome

    def __post_init__(self):
        if self.index < 1:
            raise ValidationError(f"Trial index must be positive, got {self.index}")
        try:
            object.__setattr__(self, "a", Setting(self.a))
            object.__setattr__(self, "b", Setting(self.b))
            object.__setattr__(self, "A", Outcome(self.A))
            object.__setattr__(self, "B", Outcome(self.B))
        except ValueError as e:
            raise ValidationError(f"Trial {self.index}: {e}") from e

    def to_dict(self) -> dict:
        """Convert to the CSV row layout."""
        return {
            "trial": self.index,
            "a": int(self.a),
            "b": int(self.b),
            "A": int(self.A),
            "B": int(self.B),
        }


def _frozen_array(values, shape: tuple, dtype, name: str) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_probabilities(p: np.ndarray, name: str, outcome_axes: tuple = (0, 1)) -> None:
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} contains non-finite entries")
    if p.min() < -NORM_TOL or p.max() > 1 + NORM_TOL:
        raise ValidationError(f"{name} entries must lie in [0, 1]")
    sums = p.sum(axis=outcome_axes)
    bad = np.argwhere(np.abs(sums - 1.0) > NORM_TOL)
    if bad.size:
        i, j = bad[0]
        raise ValidationError(
            f"{name} not normalised for a{i + 1}b{j + 1}: sum = {sums[i, j]!r}"
        )


@dataclass(frozen=True, eq=False)
class CountsTable:
    """
    Two-outcome counts n[A][B][i][j] with per-setting totals N_ij.

    If `declared_totals` is given it must match the summed counts.
    """
    n: np.ndarray
    declared_totals: Optional[np.ndarray] = None

    def __post_init__(self):
        n = _frozen_array(self.n, (2, 2, 2, 2), np.int64, "counts")
        if n.min() < 0:
            raise ValidationError("counts must be non-negative")
        object.__setattr__(self, "n", n)
        if self.declared_totals is not None:
            declared = np.asarray(self.declared_totals, dtype=np.int64)
            if declared.shape != (2, 2) or not np.array_equal(declared, self.totals):
                raise ValidationError(
                    f"Inconsistent totals: declared {declared.tolist()}, "
                    f"counted {self.totals.tolist()}"
                )

    @classmethod
    def zeros(cls) -> "CountsTable":
        return cls(np.zeros((2, 2, 2, 2), dtype=np.int64))

    @classmethod
    def from_arrays(cls, a_idx, b_idx, A, B) -> "CountsTable":
        """Tally columnar trial arrays (setting indices 0/1, outcomes 0/1)."""
        code = (
            np.asarray(A, dtype=np.int64) * 8
            + np.asarray(B, dtype=np.int64) * 4
            + np.asarray(a_idx, dtype=np.int64) * 2
            + np.asarray(b_idx, dtype=np.int64)
        )
        return cls(np.bincount(code, minlength=16).reshape(2, 2, 2, 2))

    @property
    def totals(self) -> np.ndarray:
        """N_ij per setting combination, shape (2, 2)."""
        return self.n.sum(axis=(0, 1))

    @property
    def total(self) -> int:
        return int(self.n.sum())

    def count(self, A: Outcome, B: Outcome, i: Setting, j: Setting) -> int:
        return int(self.n[int(A), int(B), Setting(i).index, Setting(j).index])

    def __add__(self, other: "CountsTable") -> "CountsTable":
        return CountsTable(self.n + other.n)

    def to_dict(self) -> dict:
        cells = {}
        for i in range(2):
            for j in range(2):
                cells[f"a{i + 1}b{j + 1}"] = {
                    "++": int(self.n[1, 1, i, j]),
                    "+0": int(self.n[1, 0, i, j]),
                    "0+": int(self.n[0, 1, i, j]),
                    "00": int(self.n[0, 0, i, j]),
                }
        return cells


@dataclass(frozen=True, eq=False)
class ThreeOutcomeCounts:
    """Counts over fates {+, -, 0} for the original Eberhard expression."""
    n: np.ndarray

    def __post_init__(self):
        n = _frozen_array(self.n, (3, 3, 2, 2), np.int64, "three-outcome counts")
        if n.min() < 0:
            raise ValidationError("counts must be non-negative")
        object.__setattr__(self, "n", n)

    @property
    def totals(self) -> np.ndarray:
        return self.n.sum(axis=(0, 1))

    def merge_minus(self) -> CountsTable:
        """Block the extraordinary beam: every '-' becomes undetected."""
        merged = np.zeros((2, 2, 2, 2), dtype=np.int64)
        for A in Fate:
            for B in Fate:
                a2 = 1 if A is Fate.PLUS else 0
                b2 = 1 if B is Fate.PLUS else 0
                merged[a2, b2] += self.n[int(A), int(B)]
        return CountsTable(merged)


@dataclass(frozen=True, eq=False)
class ThreeOutcomeProbs:
    """Conditional probabilities p_AB(a_i b_j) over fates {+, -, 0}."""
    p: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.p, (3, 3, 2, 2), np.float64, "three-outcome probabilities")
        _check_probabilities(p, "three-outcome probabilities")
        object.__setattr__(self, "p", p)


@dataclass(frozen=True, eq=False)
class CondProbs:
    """Conditional probabilities p_AB(a_i b_j) for A, B in {+, 0}."""
    p: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.p, (2, 2, 2, 2), np.float64, "conditional probabilities")
        _check_probabilities(p, "conditional probabilities")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_cells(cls, cells: dict) -> "CondProbs":
        """
        Build from {(i, j): (p++, p+0, p0+, p00)} with setting indices 0/1.
        """
        p = np.zeros((2, 2, 2, 2))
        for (i, j), (pp, p0, zp, zz) in cells.items():
            p[1, 1, i, j] = pp
            p[1, 0, i, j] = p0
            p[0, 1, i, j] = zp
            p[0, 0, i, j] = zz
        return cls(p)

    def cell(self, i: Setting, j: Setting) -> tuple[float, float, float, float]:
        """Quadruple (p++, p+0, p0+, p00) for setting combination a_i b_j."""
        ii, jj = Setting(i).index, Setting(j).index
        q = self.p[:, :, ii, jj]
        return (float(q[1, 1]), float(q[1, 0]), float(q[0, 1]), float(q[0, 0]))

    def to_dict(self) -> dict:
        return {
            f"a{i + 1}b{j + 1}": dict(zip(("++", "+0", "0+", "00"), self.cell(i + 1, j + 1)))
            for i in range(2)
            for j in range(2)
        }


@dataclass(frozen=True, eq=False)
class JointProbs:
    """Joint probabilities p(A, B, a_i, b_j), normalised over all 16 cells."""
    p: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.p, (2, 2, 2, 2), np.float64, "joint probabilities")
        if p.min() < -NORM_TOL or p.max() > 1 + NORM_TOL:
            raise ValidationError("joint probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValidationError(f"joint probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_cond(cls, cond: CondProbs, setting_probs: np.ndarray) -> "JointProbs":
        """Combine conditional outcomes with a 2x2 setting distribution."""
        return cls(cond.p * np.asarray(setting_probs, dtype=np.float64)[None, None, :, :])

    @classmethod
    def from_counts(cls, counts: CountsTable) -> "JointProbs":
        if counts.total == 0:
            raise InsufficientDataError("No trials recorded")
        return cls(counts.n / counts.total)

    @property
    def setting_probs(self) -> np.ndarray:
        return self.p.sum(axis=(0, 1))


@dataclass(frozen=True)
class SettingsProfile:
    """
    Setting-generator description: biases, excess predictabilities and
    the probability qf that the declared predictability bounds fail.
    """
    kappaA: float = 0.0
    kappaB: float = 0.0
    epsA: float = 0.0
    epsB: float = 0.0
    mode: PredictabilityMode = PredictabilityMode.COMMUNICATION
    qf: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", PredictabilityMode.parse(self.mode))
        for name in ("kappaA", "kappaB"):
            value = getattr(self, name)
            if not -0.5 < value < 0.5:
                raise ValidationError(f"{name} must lie in (-1/2, 1/2), got {value}")
        for name in ("epsA", "epsB", "qf"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")

    @property
    def p_a(self) -> tuple[float, float]:
        return (0.5 - self.kappaA, 0.5 + self.kappaA)

    @property
    def p_b(self) -> tuple[float, float]:
        return (0.5 - self.kappaB, 0.5 + self.kappaB)

    def setting_probs(self) -> np.ndarray:
        """Actual setting distribution p(a_i) p(b_j), shape (2, 2)."""
        return np.outer(self.p_a, self.p_b)

    def p_ij(self) -> np.ndarray:
        """
        Reference probabilities used in the adapted inequality and the
        increments; fixed to 1/4 when predictability is measured beyond 1/2.
        """
        if self.mode is PredictabilityMode.BEYOND_HALF:
            return np.full((2, 2), 0.25)
        return self.setting_probs()

    @property
    def eps_ab(self) -> float:
        return epsilon_ab(self.epsA, self.epsB)

    @property
    def eps_pm(self) -> tuple[float, float]:
        return epsilon_pm(self.epsA, self.epsB)

    def to_dict(self) -> dict:
        return {
            "kappaA": self.kappaA,
            "kappaB": self.kappaB,
            "epsA": self.epsA,
            "epsB": self.epsB,
            "mode": self.mode.value,
            "qf": self.qf,
        }


def _as_three_outcome(counts: Union[CountsTable, ThreeOutcomeCounts]) -> np.ndarray:
    if isinstance(counts, ThreeOutcomeCounts):
        return counts.n
    n = np.zeros((3, 3, 2, 2), dtype=np.int64)
    n[:2, :2] = counts.n
    return n


def eberhard_counts_value(counts: Union[CountsTable, ThreeOutcomeCounts]) -> float:
    """
    Evaluate the Eberhard counts expression.

    Two-outcome tables contribute nothing to the '-' terms.

    Args:
        counts: Two- or three-outcome counts table

    Returns:
        n++(a1b1) - n+-(a1b2) - n+0(a1b2) - n-+(a2b1) - n0+(a2b1) - n++(a2b2)
    """
    n = _as_three_outcome(counts)
    P, M, U = int(Fate.PLUS), int(Fate.MINUS), int(Fate.UNDETECTED)
    value = (
        n[P, P, 0, 0]
        - n[P, M, 0, 1] - n[P, U, 0, 1]
        - n[M, P, 1, 0] - n[U, P, 1, 0]
        - n[P, P, 1, 1]
    )
    return float(value)


def normalized_eberhard_value(probs: ThreeOutcomeProbs) -> float:
    """Probability form of the Eberhard expression; lies in [-5, 1]."""
    p = probs.p
    P, M, U = int(Fate.PLUS), int(Fate.MINUS), int(Fate.UNDETECTED)
    return float(
        p[P, P, 0, 0]
        - p[P, M, 0, 1] - p[P, U, 0, 1]
        - p[M, P, 1, 0] - p[U, P, 1, 0]
        - p[P, P, 1, 1]
    )


def che_j(probs: CondProbs) -> float:
    """CH-E value J = p++(a1b1) - p+0(a1b2) - p0+(a2b1) - p++(a2b2)."""
    p = probs.p
    return float(p[1, 1, 0, 0] - p[1, 0, 0, 1] - p[0, 1, 1, 0] - p[1, 1, 1, 1])


def estimate_cond_probs(counts: CountsTable) -> CondProbs:
    """
    Empirical conditional probabilities n_AB(a_i b_j) / N_ij.

    Raises:
        InsufficientDataError: If any setting combination is empty
    """
    totals = counts.totals
    for i in range(2):
        for j in range(2):
            if totals[i, j] == 0:
                raise InsufficientDataError(
                    f"No trials for setting combination a{i + 1}b{j + 1}"
                )
    return CondProbs(counts.n / totals[None, None, :, :])


def che_j_stderr(counts: CountsTable) -> float:
    """Binomial standard error of the empirical J from the four terms."""
    probs = estimate_cond_probs(counts)
    totals = counts.totals
    terms = (
        (probs.p[1, 1, 0, 0], totals[0, 0]),
        (probs.p[1, 0, 0, 1], totals[0, 1]),
        (probs.p[0, 1, 1, 0], totals[1, 0]),
        (probs.p[1, 1, 1, 1], totals[1, 1]),
    )
    return math.sqrt(sum(p * (1 - p) / n for p, n in terms))


@dataclass(frozen=True, eq=False)
class SinglesProbs:
    """
    Singles probabilities for each distant setting.

    alice[i, j] = pA+(a_i) given distant b_j; bob[j, i] = pB+(b_j) given a_i.
    """
    alice: np.ndarray
    bob: np.ndarray

    def to_dict(self) -> dict:
        result = {}
        for i in range(2):
            for j in range(2):
                result[f"pA+(a{i + 1})_b{j + 1}"] = float(self.alice[i, j])
                result[f"pB+(b{j + 1})_a{i + 1}"] = float(self.bob[j, i])
        return result


def singles_probs(probs: CondProbs) -> SinglesProbs:
    """Detection marginals of each side, conditioned on the distant setting."""
    p = probs.p
    alice = p[1, 1] + p[1, 0]           # indexed [i, j]
    bob = (p[1, 1] + p[0, 1]).T         # indexed [j, i]
    return SinglesProbs(alice=alice, bob=bob)


@dataclass(frozen=True)
class NoSignalingReport:
    passed: bool
    max_deviation: float
    violated_pairs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "max_deviation": self.max_deviation,
            "violated_pairs": self.violated_pairs,
        }


def no_signaling_check(probs: CondProbs, tol: float) -> NoSignalingReport:
    """
    Check that each side's singles are independent of the distant setting.

    Args:
        probs: Conditional probabilities
        tol: Allowed absolute deviation per pair (inclusive)

    Returns:
        NoSignalingReport listing every pair that deviates by more than tol
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    singles = singles_probs(probs)
    violated = []
    max_dev = 0.0
    for k in range(2):
        dev_a = abs(float(singles.alice[k, 0] - singles.alice[k, 1]))
        dev_b = abs(float(singles.bob[k, 0] - singles.bob[k, 1]))
        max_dev = max(max_dev, dev_a, dev_b)
        if dev_a > tol:
            violated.append({"side": "A", "setting": f"a{k + 1}", "deviation": dev_a})
        if dev_b > tol:
            violated.append({"side": "B", "setting": f"b{k + 1}", "deviation": dev_b})
    return NoSignalingReport(passed=not violated, max_deviation=max_dev, violated_pairs=violated)


def binomial_tolerance(counts: CountsTable, sigmas: float = 5.0) -> float:
    """Largest sigmas-wide binomial tolerance over the no-signaling pairs."""
    probs = estimate_cond_probs(counts)
    singles = singles_probs(probs)
    totals = counts.totals
    widest = 0.0
    for k in range(2):
        pa0, pa1 = singles.alice[k, 0], singles.alice[k, 1]
        var_a = pa0 * (1 - pa0) / totals[k, 0] + pa1 * (1 - pa1) / totals[k, 1]
        pb0, pb1 = singles.bob[k, 0], singles.bob[k, 1]
        var_b = pb0 * (1 - pb0) / totals[0, k] + pb1 * (1 - pb1) / totals[1, k]
        widest = max(widest, math.sqrt(var_a), math.sqrt(var_b))
    return sigmas * widest


def ch_value(probs: CondProbs, tol: float = NORM_TOL) -> float:
    """
    CH value from '++' coincidences and the singles pA+(a1), pB+(b1).

    Each single is averaged over the distant setting. On no-signaling data
    this equals che_j; on signaling data the two can differ, the result is
    advisory and a warning is logged.
    """
    report = no_signaling_check(probs, tol)
    if not report.passed:
        logger.warning(
            "CH value computed on signaling data (max deviation %.3g); result is advisory",
            report.max_deviation,
        )
    p = probs.p
    singles = singles_probs(probs)
    return float(
        p[1, 1, 0, 0] + p[1, 1, 0, 1] + p[1, 1, 1, 0] - p[1, 1, 1, 1]
        - singles.alice[0].mean() - singles.bob[0].mean()
    )


def ch_report(probs: CondProbs, tol: float = NORM_TOL) -> dict:
    report = no_signaling_check(probs, tol)
    return {
        "ch": ch_value(probs, tol),
        "che_j": che_j(probs),
        "advisory": not report.passed,
        "no_signaling": report.to_dict(),
    }


def _check_eps(epsA: float, epsB: float) -> None:
    for name, value in (("epsA", epsA), ("epsB", epsB)):
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"{name} must lie in [0, 1], got {value}")


def epsilon_ab(epsA: float, epsB: float) -> float:
    """Maximal fraction of trials with one setting communicable."""
    _check_eps(epsA, epsB)
    return min(epsA + epsB, 1.0)


def epsilon_pm(epsA: float, epsB: float) -> tuple[float, float]:
    """Return (eps_plus, eps_minus) = epsA + epsB +/- epsA*epsB."""
    _check_eps(epsA, epsB)
    product = epsA * epsB
    return (epsA + epsB + product, epsA + epsB - product)


def adapted_bound_check(j: float, eps_ab: float) -> dict:
    """
    Compare a CH-E value with the communication-adapted bound J <= eps_ab.

    Communication strategies that obey no-signaling cannot exceed eps_ab / 2.
    """
    return {
        "J": j,
        "bound": eps_ab,
        "no_signaling_bound": eps_ab / 2,
        "violates_adapted_bound": j > eps_ab,
    }


def adapted_che_jeps(probs_joint: JointProbs, profile: SettingsProfile) -> float:
    """
    Predictability-adapted CH-E value J_eps.

    Args:
        probs_joint: Joint probabilities p(AB, a_i b_j)
        profile: Settings profile in excess-predictability or beyond-half mode

    Returns:
        J_eps; <= 0 under local realism with bounded excess predictability

    Raises:
        ValidationError: If the profile is in communication-fraction mode
        DegenerateDenominatorError: If eps_minus >= 1
    """
    if profile.mode is PredictabilityMode.COMMUNICATION:
        raise ValidationError("adapted J_eps requires a predictability mode profile")
    eps_plus, eps_minus = profile.eps_pm
    if eps_minus >= 1.0:
        raise DegenerateDenominatorError(f"eps_minus = {eps_minus} >= 1")
    p = probs_joint.p
    pij = profile.p_ij()
    return float(
        p[1, 1, 0, 0] / (pij[0, 0] * (1 + eps_plus))
        - p[1, 0, 0, 1] / (pij[0, 1] * (1 - eps_minus))
        - p[0, 1, 1, 0] / (pij[1, 0] * (1 - eps_minus))
        - p[1, 1, 1, 1] / (pij[1, 1] * (1 - eps_minus))
    )


def break_even_predictability(
    probs_joint: JointProbs,
    profile: SettingsProfile,
    tol: float = 1e-12,
) -> float:
    """
    Find the common eps = epsA = epsB at which J_eps crosses zero.

    J_eps is non-increasing in eps, so plain bisection applies.

    Raises:
        BracketError: If the data do not violate the inequality at eps = 0
    """
    def j_at(eps: float) -> float:
        return adapted_che_jeps(probs_joint, replace(profile, epsA=eps, epsB=eps))

    # 1 - eps_minus = (1 - eps)^2 must stay representable above 0
    lo, hi = 0.0, 1.0 - 1e-6
    if j_at(lo) <= 0:
        raise BracketError("J_eps <= 0 already at zero predictability")
    if j_at(hi) > 0:
        raise BracketError("J_eps stays positive for all predictabilities")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if j_at(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
