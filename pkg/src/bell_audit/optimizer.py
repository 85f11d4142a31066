"""
Maximisation of the CH-E value over the quantum model, and the detection
efficiency below which no violation is possible.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .adversaries import QuantumModel, chsh_optimal_angles, click_table, quantum_cond_probs
from .core import che_j
from .errors import BracketError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_STARTS = 32
DEAD_BAND = 1e-9
TIE_TOL = 1e-12
CONVERGENCE_TOL = 1e-10

# (i, j) order of the four J terms: a1b1, a1b2, a2b1, a2b2
_ALPHA_PICK = np.array([0, 0, 1, 1])
_BETA_PICK = np.array([0, 1, 0, 1])


@dataclass(frozen=True)
class OptimizationResult:
    best_j: float
    r_star: float
    angles_star: tuple[float, float, float, float]
    evaluations: int
    converged: bool
    eta: float = 1.0

    def to_dict(self) -> dict:
        alpha1, alpha2, beta1, beta2 = self.angles_star
        return {
            "eta": self.eta,
            "best_j": self.best_j,
            "r_star": self.r_star,
            "alpha1": alpha1,
            "alpha2": alpha2,
            "beta1": beta1,
            "beta2": beta2,
            "evaluations": self.evaluations,
            "converged": self.converged,
        }

    def model(self, visibility: float = 1.0, pDark: float = 0.0) -> QuantumModel:
        alpha1, alpha2, beta1, beta2 = self.angles_star
        return QuantumModel(
            r=self.r_star, alpha1=alpha1, alpha2=alpha2, beta1=beta1, beta2=beta2,
            etaA=self.eta, etaB=self.eta, visibility=visibility, pDark=pDark,
        )


def _j_of(r: float, angles: np.ndarray, eta: float, visibility: float, p_dark: float) -> float:
    cells = click_table(
        r, angles[:2][_ALPHA_PICK], angles[2:][_BETA_PICK], eta, eta, visibility, p_dark
    )
    # cells[k] = (p++, p+0, p0+, p00)
    return float(cells[0, 0] - cells[1, 1] - cells[2, 2] - cells[3, 0])


class _Objective:
    """Negated J over x = (r, angles) or x = angles when r is fixed."""

    def __init__(self, eta, fixed_r, visibility, p_dark):
        self.eta = eta
        self.fixed_r = fixed_r
        self.visibility = visibility
        self.p_dark = p_dark

    def split(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        if self.fixed_r is None:
            return float(np.clip(x[0], 0.0, 1.0)), np.asarray(x[1:])
        return self.fixed_r, np.asarray(x)

    def join(self, r: float, angles: Sequence[float]) -> np.ndarray:
        if self.fixed_r is None:
            return np.concatenate(([r], angles))
        return np.asarray(angles, dtype=np.float64)

    def __call__(self, x: np.ndarray) -> float:
        r, angles = self.split(x)
        return -_j_of(r, angles, self.eta, self.visibility, self.p_dark)

    @property
    def bounds(self) -> list:
        angle_bounds = [(None, None)] * 4
        return [(0.0, 1.0)] + angle_bounds if self.fixed_r is None else angle_bounds


def _reduce_angles(angles: Iterable[float]) -> tuple[float, ...]:
    return tuple(float(np.mod(a, math.pi)) for a in angles)


def _local_search(objective: _Objective, x0: np.ndarray) -> tuple[float, float, tuple, int]:
    result = minimize(
        objective,
        x0=x0,
        method="Nelder-Mead",
        bounds=objective.bounds,
        options={"xatol": 1e-10, "fatol": 1e-13, "maxfev": 6000, "adaptive": True},
    )
    r, angles = objective.split(result.x)
    return -float(result.fun), r, _reduce_angles(angles), int(result.nfev)


def _preferred(a: tuple, b: tuple) -> bool:
    """True if candidate a = (j, r, angles) beats b under the tie-break rule."""
    if a[0] > b[0] + TIE_TOL:
        return True
    if b[0] > a[0] + TIE_TOL:
        return False
    return (a[1], a[2]) < (b[1], b[2])


def optimize_j(
    eta: float,
    fixed_r: Optional[float] = None,
    visibility: float = 1.0,
    pDark: float = 0.0,
    starts: int = DEFAULT_STARTS,
    extra_starts: Optional[Sequence[tuple[float, Sequence[float]]]] = None,
) -> OptimizationResult:
    """
    Maximise J over the entanglement ratio and the four analyser angles.

    Args:
        eta: Detection efficiency of both sides, in (0, 1]
        fixed_r: Hold the state ratio fixed (e.g. 1 for maximal entanglement)
        visibility: Visibility of the state in [0, 1]
        pDark: Dark-count probability per detector and trial
        starts: Number of quasi-uniform (Halton) starting points
        extra_starts: Additional (r, angles) starting points

    Returns:
        OptimizationResult at the best point found
    """
    if not 0.0 < eta <= 1.0:
        raise ValidationError(f"eta must lie in (0, 1], got {eta}")
    if not 0.0 <= visibility <= 1.0:
        raise ValidationError(f"visibility must lie in [0, 1], got {visibility}")
    if fixed_r is not None and not 0.0 <= fixed_r <= 1.0:
        raise ValidationError(f"fixed_r must lie in [0, 1], got {fixed_r}")
    if not 0.0 <= pDark < 1.0:
        raise ValidationError(f"pDark must lie in [0, 1), got {pDark}")
    if starts < 1:
        raise ValidationError(f"starts must be at least 1, got {starts}")

    objective = _Objective(eta, fixed_r, visibility, pDark)
    dim = 4 if fixed_r is not None else 5
    points = qmc.Halton(d=dim, scramble=False).random(starts)
    points[:, -4:] *= math.pi
    x0s = list(points)
    x0s.append(objective.join(1.0 if fixed_r is None else fixed_r, chsh_optimal_angles()))
    for r, angles in extra_starts or ():
        x0s.append(objective.join(r, angles))

    best = None
    evaluations = 0
    for x0 in x0s:
        j, r, angles, nfev = _local_search(objective, np.asarray(x0, dtype=np.float64))
        evaluations += nfev
        if best is None or _preferred((j, r, angles), best):
            best = (j, r, angles)

    # polish: one more cycle from the best point
    j, r, angles, nfev = _local_search(objective, objective.join(best[1], best[2]))
    evaluations += nfev
    converged = j - best[0] < CONVERGENCE_TOL
    if _preferred((j, r, angles), best):
        best = (j, r, angles)

    _, r_star, angles_star = best
    model = QuantumModel(
        r=r_star, alpha1=angles_star[0], alpha2=angles_star[1], beta1=angles_star[2],
        beta2=angles_star[3], etaA=eta, etaB=eta, visibility=visibility, pDark=pDark,
    )
    best_j = che_j(quantum_cond_probs(model))
    logger.debug("eta=%.6f best_j=%.3e r*=%.4f evals=%d", eta, best_j, r_star, evaluations)
    return OptimizationResult(
        best_j=best_j,
        r_star=r_star,
        angles_star=angles_star,
        evaluations=evaluations,
        converged=converged,
        eta=eta,
    )


def violates(result: OptimizationResult) -> bool:
    return result.best_j > DEAD_BAND


def critical_efficiency(
    fixed_r: Optional[float] = None,
    visibility: float = 1.0,
    pDark: float = 0.0,
    tol: float = 0.005,
    starts: int = DEFAULT_STARTS,
) -> float:
    """
    Lowest detection efficiency allowing a violation, by bisection on eta.

    Each step is warm-started from the optimum of the last violating eta.

    Returns:
        Midpoint of the final bracket (width <= tol)

    Raises:
        BracketError: If even eta = 1 gives no violation
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    top = optimize_j(1.0, fixed_r, visibility, pDark, starts=starts)
    if not violates(top):
        raise BracketError(
            f"No violation at eta = 1 (best J = {top.best_j:.3e}); no threshold to bracket"
        )
    lo, hi = 0.0, 1.0
    warm = [(top.r_star, top.angles_star)]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        result = optimize_j(mid, fixed_r, visibility, pDark, starts=starts, extra_starts=warm)
        if violates(result):
            hi = mid
            warm = [(result.r_star, result.angles_star)]
        else:
            lo = mid
        logger.info("Bracket [%.6f, %.6f]", lo, hi)
    return 0.5 * (lo + hi)


def threshold_sweep(
    etas: Iterable[float],
    fixed_r: Optional[float] = None,
    visibility: float = 1.0,
    pDark: float = 0.0,
    starts: int = DEFAULT_STARTS,
) -> list[dict]:
    """Optimum per efficiency: rows (eta, best_j, r_star, alpha1, alpha2, beta1, beta2)."""
    rows = []
    warm = []
    for eta in etas:
        result = optimize_j(eta, fixed_r, visibility, pDark, starts=starts, extra_starts=warm)
        warm = [(result.r_star, result.angles_star)]
        row = result.to_dict()
        rows.append({key: row[key] for key in ("eta", "best_j", "r_star", "alpha1", "alpha2", "beta1", "beta2")})
    return rows
