"""
Trial-stream generators: the photon-pair quantum model and local-realist
adversaries (deterministic, memory-equipped, setting communication in pure
and PR-box form, and excess-predictability skew).

All generators produce TrialBlocks of fixed size; block k is drawn from its
own substream so generation can be spread over worker threads.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Union

import numpy as np

from .core import (
    CondProbs,
    Fate,
    JointProbs,
    PredictabilityMode,
    Setting,
    SettingsProfile,
    ThreeOutcomeProbs,
    che_j,
    normalized_eberhard_value,
)
from .errors import ValidationError
from .rng import RngSeed
from .trials import BLOCK_SIZE, TrialBlock

logger = logging.getLogger(__name__)

N_STRATEGIES = 16
ALL_UNDETECTED = 0

# Strategy chosen from the previous trial's setting pair (a_idx, b_idx);
# each has J = 0.
MEMORY_POLICY = np.array([[15, 13], [7, 0]], dtype=np.int64)


# ===== Quantum model =====

@dataclass(frozen=True)
class QuantumModel:
    """
    Polarisation-entangled photon pairs (|HV> + r|VH>)/sqrt(1 + r^2) with
    white noise, linear analysers, detector efficiency and dark counts.
    """
    r: float = 1.0
    alpha1: float = 0.0
    alpha2: float = math.pi / 4
    beta1: float = 3 * math.pi / 8
    beta2: float = 5 * math.pi / 8
    etaA: float = 1.0
    etaB: float = 1.0
    visibility: float = 1.0
    pDark: float = 0.0

    def __post_init__(self):
        for name in ("r", "etaA", "etaB", "visibility"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.pDark < 1.0:
            raise ValidationError(f"pDark must lie in [0, 1), got {self.pDark}")
        for name in ("alpha1", "alpha2", "beta1", "beta2"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    @property
    def alphas(self) -> tuple[float, float]:
        return (self.alpha1, self.alpha2)

    @property
    def betas(self) -> tuple[float, float]:
        return (self.beta1, self.beta2)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "etaA": self.etaA,
            "etaB": self.etaB,
            "visibility": self.visibility,
            "pDark": self.pDark,
        }


def click_table(r, alpha, beta, etaA, etaB, visibility, p_dark) -> np.ndarray:
    """
    Outcome probabilities for analyser angles `alpha`, `beta` (broadcast).

    Transmission through the analysers is computed on the noisy state, then
    each transmitted photon is detected with probability eta, and a dark
    count fires independently with probability p_dark.

    Returns:
        Array with trailing axis (p++, p+0, p0+, p00)
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    norm = 1.0 + r * r
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    amp = ca * sb + r * sa * cb
    both = visibility * amp * amp / norm + (1.0 - visibility) / 4
    only_a = visibility * (ca * ca + r * r * sa * sa) / norm + (1.0 - visibility) / 2
    only_b = visibility * (sb * sb + r * r * cb * cb) / norm + (1.0 - visibility) / 2
    # transmission probabilities T[tA, tB]
    t11 = both
    t10 = only_a - both
    t01 = only_b - both
    t00 = 1.0 - only_a - only_b + both

    click_a = (p_dark, 1.0 - (1.0 - etaA) * (1.0 - p_dark))
    click_b = (p_dark, 1.0 - (1.0 - etaB) * (1.0 - p_dark))
    transmissions = ((t00, 0, 0), (t01, 0, 1), (t10, 1, 0), (t11, 1, 1))

    pp = sum(t * click_a[ta] * click_b[tb] for t, ta, tb in transmissions)
    p0 = sum(t * click_a[ta] * (1 - click_b[tb]) for t, ta, tb in transmissions)
    zp = sum(t * (1 - click_a[ta]) * click_b[tb] for t, ta, tb in transmissions)
    zz = sum(t * (1 - click_a[ta]) * (1 - click_b[tb]) for t, ta, tb in transmissions)
    return np.stack([pp, p0, zp, zz], axis=-1)


def quantum_trial_probs(model: QuantumModel, i: Setting, j: Setting) -> tuple[float, float, float, float]:
    """Quadruple (p++, p+0, p0+, p00) for setting combination a_i b_j."""
    alpha = model.alphas[Setting(i).index]
    beta = model.betas[Setting(j).index]
    cell = click_table(
        model.r, alpha, beta, model.etaA, model.etaB, model.visibility, model.pDark
    )
    return tuple(float(x) for x in cell)


def quantum_cond_probs(model: QuantumModel) -> CondProbs:
    return CondProbs.from_cells(
        {
            (i, j): quantum_trial_probs(model, i + 1, j + 1)
            for i in range(2)
            for j in range(2)
        }
    )


def chsh_optimal_angles() -> tuple[float, float, float, float]:
    """(alpha1, alpha2, beta1, beta2) reaching J = (sqrt(2) - 1)/2 at r = 1."""
    return (0.0, math.pi / 4, 3 * math.pi / 8, 5 * math.pi / 8)


# ===== Deterministic strategies =====

def strategy_outcomes(strategy: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Outcome tables of deterministic strategy `strategy` (0..15).

    Bits 0-1 give Alice's outcome for a1, a2; bits 2-3 Bob's for b1, b2.

    Returns:
        (alice[i], bob[j]) arrays of outcomes (1 = '+', 0 = undetected)
    """
    if not 0 <= strategy < N_STRATEGIES:
        raise ValidationError(f"Strategy id must lie in 0..15, got {strategy}")
    alice = np.array([(strategy >> 0) & 1, (strategy >> 1) & 1], dtype=np.int8)
    bob = np.array([(strategy >> 2) & 1, (strategy >> 3) & 1], dtype=np.int8)
    return alice, bob


def deterministic_cond_probs(strategy: int) -> CondProbs:
    alice, bob = strategy_outcomes(strategy)
    p = np.zeros((2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            p[alice[i], bob[j], i, j] = 1.0
    return CondProbs(p)


def lhv_max_j() -> dict:
    """Exhaustive maximum of J over the 16 deterministic strategies."""
    best_j, best_id = None, None
    for strategy in range(N_STRATEGIES):
        value = che_j(deterministic_cond_probs(strategy))
        if best_j is None or value > best_j:
            best_j, best_id = value, strategy
    return {"max_j": best_j, "argmax_strategy": best_id}


def lhv_three_outcome_max() -> dict:
    """
    Exhaustive maximum of the three-outcome Eberhard expression over the 81
    deterministic fate assignments (each side maps its two settings to +, - or 0).
    """
    best, witness = None, None
    for fates in itertools.product(Fate, repeat=4):
        alice, bob = fates[:2], fates[2:]
        p = np.zeros((3, 3, 2, 2))
        for i in range(2):
            for j in range(2):
                p[int(alice[i]), int(bob[j]), i, j] = 1.0
        value = normalized_eberhard_value(ThreeOutcomeProbs(p))
        if best is None or value > best:
            best, witness = value, [f.name for f in fates]
    return {"max_value": best, "assignments": 3 ** 4, "witness": witness}


def _j_contributions(strategy: int) -> np.ndarray:
    """Sign of each setting combination's J term under `strategy`, [i, j]."""
    alice, bob = strategy_outcomes(strategy)
    c = np.zeros((2, 2))
    c[0, 0] = 1.0 if alice[0] and bob[0] else 0.0
    c[0, 1] = -1.0 if alice[0] and not bob[1] else 0.0
    c[1, 0] = -1.0 if not alice[1] and bob[0] else 0.0
    c[1, 1] = -1.0 if alice[1] and bob[1] else 0.0
    return c


# ===== Adversary configuration =====

class AdversaryKind(Enum):
    DETERMINISTIC = "deterministic-lhv"
    MEMORY = "memory-lhv"
    COMM_PURE = "comm-pure"
    COMM_PRBOX = "comm-prbox"
    PREDICTABILITY = "predictability-skew"

    @classmethod
    def parse(cls, value: Union[str, "AdversaryKind"]) -> "AdversaryKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if kind.value == value or kind.name.lower() == str(value).lower():
                return kind
        raise ValidationError(f"Unknown adversary kind: {value!r}")


class Placement(Enum):
    """Where the communicated trials of a communication adversary fall."""
    BERNOULLI = "bernoulli"
    BLOCK = "block"

    @classmethod
    def parse(cls, value: Union[str, "Placement"]) -> "Placement":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"Unknown placement: {value!r}") from None


@dataclass(frozen=True)
class AdversaryConfig:
    """Local-realist adversary selection and its settings profile."""
    kind: AdversaryKind
    profile: SettingsProfile = SettingsProfile()
    base_strategy: Optional[int] = None
    placement: Placement = Placement.BERNOULLI

    def __post_init__(self):
        object.__setattr__(self, "kind", AdversaryKind.parse(self.kind))
        object.__setattr__(self, "placement", Placement.parse(self.placement))
        if self.base_strategy is not None:
            strategy_outcomes(self.base_strategy)
        mode = self.profile.mode
        if self.kind in (AdversaryKind.COMM_PURE, AdversaryKind.COMM_PRBOX):
            if mode is not PredictabilityMode.COMMUNICATION:
                raise ValidationError(f"{self.kind.value} requires communication-fraction mode")
        if self.kind is AdversaryKind.PREDICTABILITY:
            if mode is PredictabilityMode.COMMUNICATION:
                raise ValidationError(
                    "predictability-skew requires excess-predictability or beyond-half mode"
                )
        if self.kind is AdversaryKind.DETERMINISTIC and self.base_strategy is None:
            raise ValidationError("deterministic-lhv requires a strategy id")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "profile": self.profile.to_dict(),
            "base_strategy": self.base_strategy,
            "placement": self.placement.value,
        }


# ===== Generators =====

class TrialGenerator:
    """
    Base class: draws settings from the profile biases, then outcomes.

    Subclasses implement `_outcomes`. Settings are always the first draws
    from a block's generator.
    """

    def __init__(self, profile: SettingsProfile):
        self.profile = profile

    def _settings(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        pa2 = self.profile.p_a[1]
        pb2 = self.profile.p_b[1]
        a = (rng.random(size) < pa2).astype(np.int8)
        b = (rng.random(size) < pb2).astype(np.int8)
        return a, b

    def _outcomes(self, rng, a, b, index, block, seed) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def block(self, seed: RngSeed, block: int, start: int, size: int) -> TrialBlock:
        """Generate trials start .. start + size - 1 as block number `block`."""
        rng = seed.block_generator(block)
        a, b = self._settings(rng, size)
        index = np.arange(start, start + size, dtype=np.int64)
        A, B = self._outcomes(rng, a, b, index, block, seed)
        return TrialBlock(index=index, a=a, b=b, A=A, B=B)

    def describe(self) -> dict:
        return {"generator": type(self).__name__, "profile": self.profile.to_dict()}


class QuantumGenerator(TrialGenerator):
    def __init__(self, model: QuantumModel, profile: SettingsProfile):
        super().__init__(profile)
        self.model = model
        cond = quantum_cond_probs(model)
        cells = np.empty((2, 2, 4))
        for i in range(2):
            for j in range(2):
                cells[i, j] = cond.cell(i + 1, j + 1)
        self._cumulative = np.cumsum(cells, axis=-1)

    def _outcomes(self, rng, a, b, index, block, seed):
        u = rng.random(len(a))
        cum = self._cumulative[a, b]
        # 0: ++, 1: +0, 2: 0+, 3: 00
        code = (u[:, None] >= cum[:, :3]).sum(axis=1)
        A = (code < 2).astype(np.int8)
        B = ((code == 0) | (code == 2)).astype(np.int8)
        return A, B

    def exact_cond_probs(self) -> CondProbs:
        return quantum_cond_probs(self.model)

    def describe(self) -> dict:
        return {**super().describe(), "model": self.model.to_dict()}


class DeterministicGenerator(TrialGenerator):
    def __init__(self, strategy: int, profile: SettingsProfile):
        super().__init__(profile)
        self.strategy = strategy
        self._alice, self._bob = strategy_outcomes(strategy)

    def _outcomes(self, rng, a, b, index, block, seed):
        return self._alice[a], self._bob[b]

    def exact_cond_probs(self) -> CondProbs:
        return deterministic_cond_probs(self.strategy)

    def describe(self) -> dict:
        return {**super().describe(), "strategy": self.strategy}


class MemoryGenerator(TrialGenerator):
    """
    Local hidden variables with memory: the strategy of trial n is picked
    from the setting pair of trial n - 1 (MEMORY_POLICY).
    """

    def __init__(self, profile: SettingsProfile, block_size: int = BLOCK_SIZE):
        super().__init__(profile)
        self.block_size = block_size
        alice, bob = zip(*(strategy_outcomes(s) for s in range(N_STRATEGIES)))
        self._alice = np.array(alice)
        self._bob = np.array(bob)

    def _outcomes(self, rng, a, b, index, block, seed):
        prev_a = np.empty_like(a)
        prev_b = np.empty_like(b)
        prev_a[1:], prev_b[1:] = a[:-1], b[:-1]
        if block == 0:
            prev_a[0], prev_b[0] = 0, 0
        else:
            # replay the previous block's settings draws
            last_a, last_b = self._settings(seed.block_generator(block - 1), self.block_size)
            prev_a[0], prev_b[0] = last_a[-1], last_b[-1]
        strategies = MEMORY_POLICY[prev_a, prev_b]
        return self._alice[strategies, a], self._bob[strategies, b]


class _CommunicationGenerator(TrialGenerator):
    """A fraction eps_AB of trials carries the distant setting."""

    def __init__(
        self,
        profile: SettingsProfile,
        placement: Placement = Placement.BERNOULLI,
        base_strategy: int = ALL_UNDETECTED,
        n_trials: Optional[int] = None,
    ):
        super().__init__(profile)
        if profile.mode is not PredictabilityMode.COMMUNICATION:
            raise ValidationError("communication adversaries require communication-fraction mode")
        if che_j(deterministic_cond_probs(base_strategy)) != 0.0:
            raise ValidationError(f"Base strategy {base_strategy} does not have J = 0")
        if placement is Placement.BLOCK and n_trials is None:
            raise ValidationError("block placement needs the total trial count")
        self.eps_ab = profile.eps_ab
        self.placement = placement
        self.base_strategy = base_strategy
        self._alice, self._bob = strategy_outcomes(base_strategy)
        self.n_communicated = None
        if placement is Placement.BLOCK:
            self.n_communicated = math.floor(self.eps_ab * n_trials)

    def _communicated(self, rng, index) -> np.ndarray:
        if self.placement is Placement.BLOCK:
            return index <= self.n_communicated
        return rng.random(len(index)) < self.eps_ab

    def _communicated_outcomes(self, rng, a, b) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _outcomes(self, rng, a, b, index, block, seed):
        communicated = self._communicated(rng, index)
        comm_A, comm_B = self._communicated_outcomes(rng, a, b)
        A = np.where(communicated, comm_A, self._alice[a]).astype(np.int8)
        B = np.where(communicated, comm_B, self._bob[b]).astype(np.int8)
        return A, B

    def _communicated_cond_probs(self) -> np.ndarray:
        raise NotImplementedError

    def exact_cond_probs(self) -> CondProbs:
        """Expected conditional table for the i.i.d. placement."""
        base = deterministic_cond_probs(self.base_strategy).p
        return CondProbs(self.eps_ab * self._communicated_cond_probs() + (1 - self.eps_ab) * base)

    def describe(self) -> dict:
        return {
            **super().describe(),
            "eps_ab": self.eps_ab,
            "placement": self.placement.value,
            "base_strategy": self.base_strategy,
        }


class CommPureGenerator(_CommunicationGenerator):
    """Alice outputs '+'; Bob outputs '+' unless (a2, b2)."""

    def _communicated_outcomes(self, rng, a, b):
        A = np.ones_like(a)
        B = (1 - (a & b)).astype(np.int8)
        return A, B

    def _communicated_cond_probs(self) -> np.ndarray:
        p = np.zeros((2, 2, 2, 2))
        p[1, 1, 0, 0] = p[1, 1, 0, 1] = p[1, 1, 1, 0] = 1.0
        p[1, 0, 1, 1] = 1.0
        return p


class CommPRBoxGenerator(_CommunicationGenerator):
    """Shared uniform r; A = r, B = r except the opposite fate at (a2, b2)."""

    def _communicated_outcomes(self, rng, a, b):
        shared = (rng.random(len(a)) < 0.5).astype(np.int8)
        return shared, shared ^ (a & b)

    def _communicated_cond_probs(self) -> np.ndarray:
        p = np.zeros((2, 2, 2, 2))
        for i in range(2):
            for j in range(2):
                if i == 1 and j == 1:
                    p[1, 0, i, j] = p[0, 1, i, j] = 0.5
                else:
                    p[1, 1, i, j] = p[0, 0, i, j] = 0.5
        return p


@dataclass(frozen=True)
class SkewComponent:
    """One value of the hidden variable mu in the predictability adversary."""
    weight: float
    strategy: int
    p_a1: float
    p_b1: float

    def setting_probs(self) -> np.ndarray:
        return np.outer((self.p_a1, 1 - self.p_a1), (self.p_b1, 1 - self.p_b1))


class PredictabilityGenerator(TrialGenerator):
    """
    Excess-predictability adversary: mu picks a deterministic strategy and
    skews the setting distribution to a corner of the allowed bounds.

    The base strategy is paired with the all-undetected strategy carrying the
    mirrored skew, so the setting marginals stay at the declared biases.
    """

    def __init__(self, profile: SettingsProfile, base_strategy: int = 13):
        super().__init__(profile)
        if profile.mode is PredictabilityMode.COMMUNICATION:
            raise ValidationError("predictability adversary requires a predictability mode")
        if profile.epsA >= 1 or profile.epsB >= 1:
            raise ValidationError("epsA and epsB must be below 1 for the skew adversary")
        self.base_strategy = base_strategy
        self.components = self._build_components()
        alice, bob = zip(*(strategy_outcomes(s) for s in range(N_STRATEGIES)))
        self._alice = np.array(alice)
        self._bob = np.array(bob)

    def _max_shift(self, p_first: float, eps: float, side: str) -> float:
        if self.profile.mode is PredictabilityMode.BEYOND_HALF:
            # both settings must stay within (1 +/- eps)/2, and so must the mirror
            bias = abs(p_first - 0.5)
            shift = 0.5 * eps - bias
            if shift < 0:
                raise ValidationError(
                    f"Bias of side {side} exceeds its predictability bound beyond 1/2"
                )
            return shift
        return eps * min(p_first, 1 - p_first)

    def _build_components(self) -> list[SkewComponent]:
        pa1, pb1 = self.profile.p_a[0], self.profile.p_b[0]
        shift_a = self._max_shift(pa1, self.profile.epsA, "A")
        shift_b = self._max_shift(pb1, self.profile.epsB, "B")
        pij = self.profile.p_ij()
        contributions = _j_contributions(self.base_strategy)

        best = None
        for sign_a, sign_b in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
            skewed = np.outer(
                (pa1 + sign_a * shift_a, 1 - pa1 - sign_a * shift_a),
                (pb1 + sign_b * shift_b, 1 - pb1 - sign_b * shift_b),
            )
            score = float((contributions * skewed / pij).sum())
            if best is None or score > best[0]:
                best = (score, sign_a, sign_b)
        _, sign_a, sign_b = best

        components = [
            SkewComponent(0.5, self.base_strategy, pa1 + sign_a * shift_a, pb1 + sign_b * shift_b),
            SkewComponent(0.5, ALL_UNDETECTED, pa1 - sign_a * shift_a, pb1 - sign_b * shift_b),
        ]
        for c in components:
            for value in (c.p_a1, c.p_b1):
                if not 0.0 < value < 1.0:
                    raise ValidationError("Skewed setting probability leaves (0, 1)")
        logger.debug("Skew components: %s", components)
        return components

    def _mu_and_settings(self, rng, size):
        mu = (rng.random(size) >= self.components[0].weight).astype(np.int8)
        p_a2 = np.array([1 - c.p_a1 for c in self.components])[mu]
        p_b2 = np.array([1 - c.p_b1 for c in self.components])[mu]
        a = (rng.random(size) < p_a2).astype(np.int8)
        b = (rng.random(size) < p_b2).astype(np.int8)
        return mu, a, b

    def block(self, seed, block, start, size):
        rng = seed.block_generator(block)
        mu, a, b = self._mu_and_settings(rng, size)
        strategies = np.array([c.strategy for c in self.components])[mu]
        index = np.arange(start, start + size, dtype=np.int64)
        A = self._alice[strategies, a]
        B = self._bob[strategies, b]
        return TrialBlock(index=index, a=a, b=b, A=A, B=B)

    def exact_joint(self) -> JointProbs:
        """Exact p(A, B, a, b) averaged over mu."""
        p = np.zeros((2, 2, 2, 2))
        for c in self.components:
            p += c.weight * JointProbs.from_cond(
                deterministic_cond_probs(c.strategy), c.setting_probs()
            ).p
        return JointProbs(p)

    def predictability_bounds_hold(self, atol: float = 1e-12) -> bool:
        """Check (1 - eps-)p(a)p(b) <= p(a,b|mu) <= (1 + eps+)p(a)p(b) for every mu."""
        eps_plus, eps_minus = self.profile.eps_pm
        reference = self.profile.p_ij()
        for c in self.components:
            skewed = c.setting_probs()
            if np.any(skewed < (1 - eps_minus) * reference - atol):
                return False
            if np.any(skewed > (1 + eps_plus) * reference + atol):
                return False
        return True

    def describe(self) -> dict:
        return {
            **super().describe(),
            "base_strategy": self.base_strategy,
            "components": [c.__dict__ for c in self.components],
        }


def comm_pure_adversary(
    profile: SettingsProfile,
    placement: Placement = Placement.BERNOULLI,
    base_strategy: int = ALL_UNDETECTED,
    n_trials: Optional[int] = None,
) -> CommPureGenerator:
    return CommPureGenerator(profile, Placement.parse(placement), base_strategy, n_trials)


def comm_prbox_adversary(
    profile: SettingsProfile,
    placement: Placement = Placement.BERNOULLI,
    base_strategy: int = ALL_UNDETECTED,
    n_trials: Optional[int] = None,
) -> CommPRBoxGenerator:
    return CommPRBoxGenerator(profile, Placement.parse(placement), base_strategy, n_trials)


def predictability_adversary(profile: SettingsProfile, base_strategy: int = 13) -> PredictabilityGenerator:
    return PredictabilityGenerator(profile, base_strategy)


def make_generator(
    source: Union[AdversaryConfig, QuantumModel, TrialGenerator],
    n_trials: int,
    profile: Optional[SettingsProfile] = None,
    block_size: int = BLOCK_SIZE,
) -> TrialGenerator:
    """Build the generator behind an adversary config or quantum model."""
    if isinstance(source, TrialGenerator):
        return source
    if isinstance(source, QuantumModel):
        return QuantumGenerator(source, profile or SettingsProfile())
    kind = source.kind
    if kind is AdversaryKind.DETERMINISTIC:
        return DeterministicGenerator(source.base_strategy, source.profile)
    if kind is AdversaryKind.MEMORY:
        return MemoryGenerator(source.profile, block_size)
    base = ALL_UNDETECTED if source.base_strategy is None else source.base_strategy
    if kind is AdversaryKind.COMM_PURE:
        return comm_pure_adversary(source.profile, source.placement, base, n_trials)
    if kind is AdversaryKind.COMM_PRBOX:
        return comm_prbox_adversary(source.profile, source.placement, base, n_trials)
    strategy = 13 if source.base_strategy is None else source.base_strategy
    return predictability_adversary(source.profile, strategy)


def simulate(
    source: Union[AdversaryConfig, QuantumModel, TrialGenerator],
    n_trials: int,
    seed: RngSeed,
    profile: Optional[SettingsProfile] = None,
    workers: int = 1,
    block_size: int = BLOCK_SIZE,
) -> Iterator[TrialBlock]:
    """
    Generate `n_trials` trials as an ordered stream of TrialBlocks.

    Args:
        source: Adversary config, quantum model (settings from `profile`)
            or a ready generator
        n_trials: Number of trials (>= 1)
        seed: Root seed and substream
        profile: Settings profile for a quantum model
        workers: Threads generating blocks concurrently
        block_size: Trials per block; part of the reproducibility contract

    Yields:
        TrialBlocks with indices 1..n_trials in order
    """
    if n_trials < 1:
        raise ValidationError(f"n_trials must be at least 1, got {n_trials}")
    generator = make_generator(source, n_trials, profile, block_size)
    n_blocks = -(-n_trials // block_size)
    logger.debug("Simulating %d trials in %d blocks with %s", n_trials, n_blocks, type(generator).__name__)

    def make(k: int) -> TrialBlock:
        start = k * block_size
        return generator.block(seed, k, start + 1, min(block_size, n_trials - start))

    if workers <= 1:
        for k in range(n_blocks):
            yield make(k)
        return

    window = workers * 2
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for first in range(0, n_blocks, window):
            yield from pool.map(make, range(first, min(first + window, n_blocks)))
