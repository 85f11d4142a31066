"""
Memory-loophole-free analysis of a trial stream.

Each trial contributes an increment to a process that is a supermartingale
under local realism, so Hoeffding's inequality bounds its upward deviations
without any i.i.d. assumption. Non-contributing trials are concentrated away
with stopping times decided from the past only.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import CountsTable, SettingsProfile, TrialRecord
from .errors import (
    DegenerateDenominatorError,
    InfeasibleExperimentError,
    InsufficientDataError,
    ValidationError,
)
from .trials import TrialBlock, as_blocks, check_order

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12
SECONDS_PER_YEAR = 365.25 * 24 * 3600


class IncrementKind(Enum):
    PLAIN = "plain-J"
    SHIFTED = "shifted-K"
    ADAPTED = "adapted-Jeps"

    @classmethod
    def parse(cls, value: Union[str, "IncrementKind"]) -> "IncrementKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "plain": cls.PLAIN,
            "plain-j": cls.PLAIN,
            "j": cls.PLAIN,
            "shifted": cls.SHIFTED,
            "shifted-k": cls.SHIFTED,
            "k": cls.SHIFTED,
            "adapted": cls.ADAPTED,
            "adapted-jeps": cls.ADAPTED,
            "adapted-jε": cls.ADAPTED,
            "jeps": cls.ADAPTED,
        }
        try:
            return aliases[str(value).lower()]
        except KeyError:
            raise ValidationError(f"Unknown increment kind: {value!r}") from None


@dataclass(frozen=True)
class IncrementSpec:
    """
    How trial outcomes are turned into process increments.

    p11..p22 are the declared joint setting probabilities. `guard` is the
    relative conservative rounding: p11 is rounded up and the other three
    down before they enter increments and ranges.
    """
    kind: IncrementKind
    p11: float = 0.25
    p12: float = 0.25
    p21: float = 0.25
    p22: float = 0.25
    eps_ab: Optional[float] = None
    eps_plus: Optional[float] = None
    eps_minus: Optional[float] = None
    qf: float = 0.0
    guard: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", IncrementKind.parse(self.kind))
        probs = (self.p11, self.p12, self.p21, self.p22)
        for name, value in zip(("p11", "p12", "p21", "p22"), probs):
            if not 0.0 < value < 1.0:
                raise ValidationError(f"{name} must lie in (0, 1), got {value}")
        if abs(sum(probs) - 1.0) > SUM_TOL:
            raise ValidationError(f"Setting probabilities sum to {sum(probs)}, not 1")
        if not 0.0 <= self.guard < 1.0:
            raise ValidationError(f"guard must lie in [0, 1), got {self.guard}")
        if not 0.0 <= self.qf <= 1.0:
            raise ValidationError(f"qf must lie in [0, 1], got {self.qf}")

        shifted = self.kind is IncrementKind.SHIFTED
        adapted = self.kind is IncrementKind.ADAPTED
        if (self.eps_ab is not None) != shifted:
            raise ValidationError("eps_ab is required for shifted-K and only for shifted-K")
        if (self.eps_plus is not None) != adapted or (self.eps_minus is not None) != adapted:
            raise ValidationError(
                "eps_plus and eps_minus are required for adapted-Jeps and only for adapted-Jeps"
            )
        if shifted and not 0.0 <= self.eps_ab <= 1.0:
            raise ValidationError(f"eps_ab must lie in [0, 1], got {self.eps_ab}")
        if adapted:
            if self.eps_plus < 0 or self.eps_minus < 0:
                raise ValidationError("eps_plus and eps_minus must be non-negative")
            if self.eps_minus >= 1.0:
                raise DegenerateDenominatorError(f"eps_minus = {self.eps_minus} >= 1")

    @classmethod
    def from_profile(
        cls,
        profile: SettingsProfile,
        kind: Union[str, IncrementKind],
        guard: float = 0.0,
    ) -> "IncrementSpec":
        """Build a spec from a settings profile (p_ij are 1/4 beyond one half)."""
        kind = IncrementKind.parse(kind)
        p = profile.p_ij()
        extra = {}
        if kind is IncrementKind.SHIFTED:
            extra["eps_ab"] = profile.eps_ab
        elif kind is IncrementKind.ADAPTED:
            extra["eps_plus"], extra["eps_minus"] = profile.eps_pm
        return cls(
            kind=kind,
            p11=float(p[0, 0]),
            p12=float(p[0, 1]),
            p21=float(p[1, 0]),
            p22=float(p[1, 1]),
            qf=profile.qf,
            guard=guard,
            **extra,
        )

    def guarded_probs(self) -> tuple[float, float, float, float]:
        return (
            min(self.p11 * (1.0 + self.guard), 1.0),
            self.p12 * (1.0 - self.guard),
            self.p21 * (1.0 - self.guard),
            self.p22 * (1.0 - self.guard),
        )

    def _weights(self) -> tuple[float, float]:
        """Scale of the positive and of the negative cells."""
        if self.kind is IncrementKind.ADAPTED:
            return 1.0 / (1.0 + self.eps_plus), 1.0 / (1.0 - self.eps_minus)
        return 1.0, 1.0

    def base_table(self) -> np.ndarray:
        """Unshifted increment per (A, B, i, j)."""
        p11, p12, p21, p22 = self.guarded_probs()
        plus, minus = self._weights()
        table = np.zeros((2, 2, 2, 2))
        table[1, 1, 0, 0] = plus / p11
        table[1, 0, 0, 1] = -minus / p12
        table[0, 1, 1, 0] = -minus / p21
        table[1, 1, 1, 1] = -minus / p22
        return table

    def value_table(self) -> np.ndarray:
        """Increment returned by `increment` per (A, B, i, j)."""
        if self.kind is IncrementKind.SHIFTED:
            return self.base_table() - self.eps_ab
        return self.base_table()

    @property
    def process_shift(self) -> float:
        """Per-trial shift delta subtracted in the analysed process."""
        if self.kind is IncrementKind.SHIFTED:
            return self.eps_ab
        if self.kind is IncrementKind.ADAPTED and self.qf > 0:
            return self.qf / (1.0 - self.eps_minus)
        return 0.0

    def process_table(self) -> np.ndarray:
        return self.base_table() - self.process_shift

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "p_ij": [[self.p11, self.p12], [self.p21, self.p22]],
            "eps_ab": self.eps_ab,
            "eps_plus": self.eps_plus,
            "eps_minus": self.eps_minus,
            "qf": self.qf,
            "guard": self.guard,
        }


def increment(trial: TrialRecord, spec: IncrementSpec) -> float:
    """
    Increment contributed by a single trial.

    Args:
        trial: The trial
        spec: Increment construction

    Returns:
        J, K = J - eps_ab, or J_eps value of the trial
    """
    return float(spec.value_table()[int(trial.A), int(trial.B), trial.a.index, trial.b.index])


def increment_range(spec: IncrementSpec) -> float:
    """Width of the interval holding every increment (before concentration)."""
    p11, p12, p21, p22 = spec.guarded_probs()
    plus, minus = spec._weights()
    return plus / p11 + minus * max(1.0 / p12, 1.0 / p21, 1.0 / p22)


# ===== Concentration =====

@dataclass(frozen=True, eq=False)
class Concentration:
    """Stopped process: values Z at stops, their 1-based positions, M and m_M."""
    stopped_values: np.ndarray
    stop_indices: np.ndarray
    M: int
    m_M: int

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.stopped_values, prepend=0.0)


def _stop_mask(black: np.ndarray, s: Optional[int], streak: int) -> tuple[np.ndarray, int]:
    """
    Stopping times within one chunk.

    A stop falls on every black trial, and on a white trial that completes
    a run of s + 1 whites since the last stop. `streak` is the number of
    whites since the last stop carried in from the previous chunk.

    Returns:
        (stop mask, streak carried out)
    """
    n = len(black)
    if s is None:
        if n == 0:
            return black.copy(), streak
        tail = n - 1 - int(np.flatnonzero(black)[-1]) if black.any() else n + streak
        return black.copy(), tail
    if n == 0:
        return black.copy(), streak
    position = np.arange(n, dtype=np.int64)
    last_black = np.maximum.accumulate(np.where(black, position, -1))
    run = np.where(last_black >= 0, position - last_black, position + 1 + streak)
    stops = black | (run % (s + 1) == 0)
    carry = 0 if black[-1] else int(run[-1] % (s + 1))
    return stops, carry


def _as_array(increments: Iterable[float]) -> np.ndarray:
    if isinstance(increments, np.ndarray):
        return increments.astype(np.float64, copy=False)
    return np.fromiter(increments, dtype=np.float64)


def concentrate(increments: Iterable[float], s: int, eps_ab: float) -> Concentration:
    """
    Apply the streak stopping rule to an increment stream.

    Args:
        increments: Process increments in trial order
        s: Streak length (s = 0 stops at every trial)
        eps_ab: Per-trial shift; increments equal to -eps_ab are non-contributing

    Returns:
        Concentration with the cumulative sums at every stop
    """
    if s < 0:
        raise ValidationError(f"Streak length must be non-negative, got {s}")
    values = _as_array(increments)
    black = values != -eps_ab
    stops, _ = _stop_mask(black, s, 0)
    prefix = np.cumsum(values)
    stop_idx = np.flatnonzero(stops)
    M = len(stop_idx)
    return Concentration(
        stopped_values=prefix[stop_idx],
        stop_indices=stop_idx + 1,
        M=M,
        m_M=int(stop_idx[-1]) + 1 if M else 0,
    )


def concentrated_range(spec: IncrementSpec, s: int) -> float:
    return increment_range(spec) + s * spec.process_shift


def default_streak(spec: IncrementSpec) -> Optional[int]:
    """floor(1/delta), or None (skip every non-contributing trial) when delta = 0."""
    delta = spec.process_shift
    if delta <= 0:
        return None
    return int(math.floor((1.0 / delta) * (1.0 + 1e-12)))


# ===== p-values =====

def hoeffding_bound(c: float, r: float) -> float:
    """exp(-2 c^2 / r^2)."""
    if r <= 0:
        raise ValidationError(f"Range must be positive, got {r}")
    return math.exp(-2.0 * c * c / (r * r))


def hoeffding_pvalue(Z: float, length: int, r: float) -> float:
    """
    One-sided Hoeffding p-value of a process value.

    Args:
        Z: Process value after `length` steps
        length: Number of (concentrated) steps
        r: Range of the increments

    Returns:
        exp(-2 c^2 / r^2) with c = Z / sqrt(length), or 1 if Z <= 0
    """
    if length < 1:
        raise ValidationError(f"Length must be at least 1, got {length}")
    if r <= 0:
        raise ValidationError(f"Range must be positive, got {r}")
    if Z <= 0:
        return 1.0
    c = Z / math.sqrt(length)
    return min(1.0, hoeffding_bound(c, r))


def contributing_fraction(increments: Iterable[float]) -> float:
    values = _as_array(increments)
    if values.size == 0:
        raise InsufficientDataError("Cannot compute the contributing fraction of an empty stream")
    return np.count_nonzero(values) / values.size


def bonferroni(p_process: float, p_epsilon_estimates: float, alpha: float) -> dict:
    """
    Combine the process test with the test of the declared predictabilities.

    Each test runs at alpha / 2; rejection requires both (inclusive).
    """
    for name, value in (("p_process", p_process), ("p_epsilon_estimates", p_epsilon_estimates), ("alpha", alpha)):
        if not 0.0 < value <= 1.0:
            raise ValidationError(f"{name} must lie in (0, 1], got {value}")
    threshold = alpha / 2
    return {
        "reject": p_process <= threshold and p_epsilon_estimates <= threshold,
        "threshold": threshold,
        "p_process": p_process,
        "p_epsilon_estimates": p_epsilon_estimates,
        "alpha": alpha,
    }


# ===== Single-pass scan =====

@dataclass(frozen=True)
class ProcessSummary:
    N: int
    M: int
    m_M: int
    Z: float
    r: float
    s: int
    c: float
    p_value: float
    f: float
    kind: IncrementKind

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "M": self.M,
            "m_M": self.m_M,
            "Z": self.Z,
            "r": self.r,
            "s": self.s,
            "c": self.c,
            "p_value": self.p_value,
            "f": self.f,
            "kind": self.kind.value,
        }


@dataclass
class ProcessScanner:
    """
    Ordered, resumable scan of trial blocks for one streak length.

    State carried between blocks: last trial index, whites since the last
    stop, the running process value and the value at the last stop.
    """
    spec: IncrementSpec
    s: Optional[int] = None
    N: int = 0
    M: int = 0
    m_M: int = 0
    Z: float = 0.0
    contributing: int = 0
    last_index: int = 0
    counts: CountsTable = field(default_factory=CountsTable.zeros)
    _running: float = field(default=0.0, init=False, repr=False)
    _streak: int = field(default=0, init=False, repr=False)

    def __post_init__(self):
        if self.s is not None and self.s < 0:
            raise ValidationError(f"Streak length must be non-negative, got {self.s}")
        self._table = self.spec.process_table()
        self._black = self.spec.base_table() != 0.0

    def feed(self, block: TrialBlock) -> None:
        self.last_index = check_order(block, self.last_index)
        n = len(block)
        if not n:
            return
        increments = self._table[block.A, block.B, block.a, block.b]
        black = self._black[block.A, block.B, block.a, block.b]
        prefix = np.cumsum(np.concatenate(([self._running], increments)))[1:]
        stops, self._streak = _stop_mask(black, self.s, self._streak)
        stop_idx = np.flatnonzero(stops)
        if stop_idx.size:
            self.M += int(stop_idx.size)
            self.m_M = self.N + int(stop_idx[-1]) + 1
            self.Z = float(prefix[stop_idx[-1]])
        self._running = float(prefix[-1])
        self.contributing += int(np.count_nonzero(black))
        self.N += n
        self.counts = self.counts + block.counts()

    def summary(self) -> ProcessSummary:
        if self.N == 0:
            raise InsufficientDataError("No trials to analyse")
        s = self.N if self.s is None else self.s
        r = increment_range(self.spec) + (0 if self.s is None else self.s) * self.spec.process_shift
        if self.M:
            c = self.Z / math.sqrt(self.M)
            p_value = hoeffding_pvalue(self.Z, self.M, r)
        else:
            c, p_value = 0.0, 1.0
        return ProcessSummary(
            N=self.N,
            M=self.M,
            m_M=self.m_M,
            Z=self.Z,
            r=r,
            s=s,
            c=c,
            p_value=p_value,
            f=self.contributing / self.N,
            kind=self.spec.kind,
        )


def analyze(
    trials: Iterable[Union[TrialBlock, TrialRecord]],
    spec: IncrementSpec,
    s: Optional[int] = None,
) -> ProcessSummary:
    """
    Scan a trial stream once, in order, and summarise the process.

    Args:
        trials: TrialBlocks or TrialRecords in index order
        spec: Increment construction
        s: Streak length; defaults to floor(1/delta), or to skipping every
           non-contributing trial when the process has no shift

    Returns:
        ProcessSummary with the Hoeffding p-value on the concentrated process

    Raises:
        TrialOrderError: On out-of-order indices
        InsufficientDataError: On an empty stream
    """
    if s is None:
        s = default_streak(spec)
    scanner = ProcessScanner(spec, s)
    for block in as_blocks(trials):
        scanner.feed(block)
    summary = scanner.summary()
    logger.debug("Process summary: %s", summary)
    return summary


def streak_grid(
    trials: Iterable[Union[TrialBlock, TrialRecord]],
    spec: IncrementSpec,
    s_values: Sequence[int],
) -> list[ProcessSummary]:
    """Analyse one pass of trials for several streak lengths at once."""
    if not s_values:
        raise ValidationError("streak_grid needs at least one streak length")
    scanners = [ProcessScanner(spec, s) for s in s_values]
    for block in as_blocks(trials):
        for scanner in scanners:
            scanner.feed(block)
    return [scanner.summary() for scanner in scanners]


def setting_frequency_diagnostic(counts: CountsTable, spec: IncrementSpec, sigmas: float = 5.0) -> dict:
    """
    Compare declared p_ij with the empirical setting frequencies.

    Large deviations mean the declared probabilities are not conservative
    estimates of the generator.
    """
    total = counts.total
    if total == 0:
        raise InsufficientDataError("No trials to compare setting frequencies against")
    declared = np.array([[spec.p11, spec.p12], [spec.p21, spec.p22]])
    empirical = counts.totals / total
    sigma = np.sqrt(declared * (1 - declared) / total)
    z = (empirical - declared) / sigma
    return {
        "declared": declared.tolist(),
        "empirical": empirical.tolist(),
        "z_scores": z.tolist(),
        "max_abs_z": float(np.abs(z).max()),
        "consistent": bool(np.abs(z).max() <= sigmas),
    }


def tail_frequencies(summaries: Sequence[ProcessSummary], c_grid: Sequence[float]) -> list[dict]:
    """
    Empirical frequency of runs with Z >= c sqrt(M), against the Hoeffding bound.
    """
    if not summaries:
        raise InsufficientDataError("No summaries given")
    r = max(s.r for s in summaries)
    rows = []
    for c in c_grid:
        hits = sum(1 for s in summaries if s.M and s.c >= c)
        frequency = hits / len(summaries)
        bound = hoeffding_bound(c, r)
        rows.append({"c": c, "frequency": frequency, "bound": bound, "ok": frequency <= bound})
    return rows


# ===== Planning =====

@dataclass(frozen=True)
class RuntimePlan:
    t_plain: float
    t_doob: float
    c_adjusted: float
    s: int
    r: float

    def to_dict(self) -> dict:
        return {
            "t_plain": self.t_plain,
            "t_plain_years": self.t_plain / SECONDS_PER_YEAR,
            "t_doob": self.t_doob,
            "t_doob_hours": self.t_doob / 3600,
            "c_adjusted": self.c_adjusted,
            "s": self.s,
            "r": self.r,
        }


def plan_runtime(
    R: float,
    J: float,
    eps_ab: float,
    c: float,
    f: float,
    s: Optional[int] = None,
    r: float = 8.0,
) -> RuntimePlan:
    """
    Expected running time to reach threshold c with and without concentration.

    Args:
        R: Trial rate (trials per second)
        J: Expected CH-E value per trial
        eps_ab: Communication fraction
        c: Target threshold statistic
        f: Contributing fraction
        s: Streak length (default floor(1/eps_ab))
        r: Increment range before concentration

    Raises:
        InfeasibleExperimentError: If J <= eps_ab
    """
    if R <= 0 or f <= 0 or c <= 0 or r <= 0:
        raise ValidationError("R, f, c and r must be positive")
    if not 0.0 <= eps_ab <= 1.0:
        raise ValidationError(f"eps_ab must lie in [0, 1], got {eps_ab}")
    if J <= eps_ab:
        raise InfeasibleExperimentError(f"J = {J} does not exceed eps_ab = {eps_ab}")
    if s is None:
        s = int(math.floor((1.0 / eps_ab) * (1.0 + 1e-12))) if eps_ab > 0 else 0
    gap = J - eps_ab
    c_adjusted = c * (r + s * eps_ab) / r
    return RuntimePlan(
        t_plain=c * c / (R * gap * gap),
        t_doob=c_adjusted * c_adjusted * f / (R * gap * gap),
        c_adjusted=c_adjusted,
        s=s,
        r=r,
    )
