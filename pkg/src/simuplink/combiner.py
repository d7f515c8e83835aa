"""Wave-domain SIM combiner and digital phased-array baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import PropagationStack

log = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi
ZF_MAX_CONDITION = 1e12


class CombinerError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseProfile:
    """Unit-cell phases, shape (L, N), stored wrapped into [0, 2*pi)."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, ndmin=2)
        if not np.all(np.isfinite(theta)):
            raise CombinerError("phase profile contains non-finite entries")
        theta = np.mod(theta, TWO_PI)
        theta[theta >= TWO_PI] = 0.0  # np.mod can round up to 2*pi
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, L: int, N: int) -> "PhaseProfile":
        return cls(np.zeros((L, N)))

    @classmethod
    def random(cls, L: int, N: int, rng: np.random.Generator) -> "PhaseProfile":
        return cls(rng.uniform(0.0, TWO_PI, size=(L, N)))

    @property
    def L(self) -> int:
        return self.theta.shape[0]

    @property
    def N(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class CombinerMatrix:
    G: np.ndarray
    kind: str


def insertion_loss_factor(T_sim: float, L: int) -> float:
    """Amplitude factor ``sqrt(T_sim ** L)`` of an L-layer stack."""
    return float(np.sqrt(T_sim**L))


def sim_matrix(stack: PropagationStack, theta: np.ndarray, T_sim: float = 1.0) -> np.ndarray:
    """Raw-array form of :func:`compose_sim`; ``theta`` may hold unwrapped phases."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (stack.layer_count, stack.N):
        raise CombinerError(f"phases have shape {theta.shape}, stack needs {(stack.layer_count, stack.N)}")
    phasors = np.exp(1j * theta)
    G = stack.matrices[0] * phasors[0]
    for P, w in zip(stack.matrices[1:], phasors[1:]):
        G = (G @ P) * w
    return insertion_loss_factor(T_sim, stack.layer_count) * G


def compose_sim(stack: PropagationStack, phases: PhaseProfile, T_sim: float = 1.0) -> CombinerMatrix:
    return CombinerMatrix(sim_matrix(stack, phases.theta, T_sim), kind="sim")


def matched_filter_phases(stack: PropagationStack, H: np.ndarray, target_user: int) -> PhaseProfile:
    """Heuristic single-user phase alignment, outermost layer first.

    At layer ``l`` each cell cancels the phase of the field arriving from the
    already-phased outer layers plus the phase of the direct (same-index)
    path towards the next inner layer.  For layer 1 the direct path is the
    coupling into the target user's DPA element.
    """
    H = np.asarray(H)
    K = H.shape[1]
    if not 0 <= target_user < K:
        raise CombinerError(f"target_user {target_user} out of range for K={K}")
    if target_user >= stack.M:
        raise CombinerError(f"no DPA element for user {target_user} (M={stack.M})")
    L, N = stack.layer_count, stack.N
    theta = np.zeros((L, N))
    field = H[:, target_user].astype(complex)
    undefined = 0
    for l in range(L - 1, -1, -1):
        P = stack.matrices[l]
        direct = P[target_user, :] if l == 0 else np.diag(P)
        dead = np.abs(field) == 0
        undefined += int(dead.sum())
        theta[l] = np.where(dead, 0.0, -np.angle(field) - np.angle(direct))
        field = P @ (np.exp(1j * theta[l]) * field)
    if undefined:
        log.warning("matched filter: %d cells saw zero field; their phases were set to 0", undefined)
    return PhaseProfile(theta)


def dpa_mrc(H_dpa: np.ndarray) -> CombinerMatrix:
    H_dpa = np.asarray(H_dpa)
    if H_dpa.shape[1] != 1:
        raise CombinerError(f"MRC baseline is single-user, got K={H_dpa.shape[1]}")
    return CombinerMatrix(H_dpa.conj().T, kind="dpa_mrc")


def dpa_zf(H_dpa: np.ndarray) -> CombinerMatrix:
    """Zero-forcing ``(H^H H)^-1 H^H`` via a linear solve."""
    H_dpa = np.asarray(H_dpa)
    M, K = H_dpa.shape
    if K > M:
        raise CombinerError(f"zero-forcing needs K <= M, got K={K}, M={M}")
    gram = H_dpa.conj().T @ H_dpa
    cond = np.linalg.cond(H_dpa)
    if not np.isfinite(cond) or cond > ZF_MAX_CONDITION:
        raise CombinerError(f"channel is rank deficient for zero-forcing (condition number {cond:.3e})")
    return CombinerMatrix(np.linalg.solve(gram, H_dpa.conj().T), kind="dpa_zf")
