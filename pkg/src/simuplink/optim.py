"""Sum-rate maximisation over the unit-cell phases.

Two optimisers share one analytic gradient:

* :func:`gradient_ascent` -- per-layer normalised gradient steps with a
  two-way backtracking (Armijo) line search that can also probe the mirrored
  step;
* :func:`quasi_newton` -- limited-memory BFGS ascent, the curvature-aware
  alternative.

Both operate on raw ``(L, N)`` phase arrays internally so that they can be
driven by any smooth objective (see ``ascend_gradient``/``ascend_quasi_newton``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .channel import NoiseBudget
from .combiner import PhaseProfile, insertion_loss_factor
from .geometry import PropagationStack

LN2 = np.log(2.0)

Objective = Callable[[np.ndarray], float]
ObjectiveGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 500
    alpha_init: float = 1.8
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    rel_improvement_tol: float = 1e-6
    patience: int = 10
    min_step: float = 1e-12
    max_expansions: int = 30
    mirror_probe: bool = True
    warm_start_step: bool = True
    memory: int = 10
    seed: int | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.alpha_init <= 0:
            raise ValueError("alpha_init must be positive")

    @classmethod
    def gradient_ascent_defaults(cls, K: int, **overrides) -> "OptimizerConfig":
        alpha = 1.8 if K == 1 else 2.2
        return cls(**{"max_iterations": 500, "alpha_init": alpha, **overrides})

    @classmethod
    def quasi_newton_defaults(cls, **overrides) -> "OptimizerConfig":
        return cls(**{"max_iterations": 100, "alpha_init": 1.0, "mirror_probe": False, **overrides})


@dataclass
class OptimizerTrace:
    sum_rate: list[float] = field(default_factory=list)
    step: list[float] = field(default_factory=list)
    grad_norms: list[np.ndarray] = field(default_factory=list)
    termination: str = ""
    evaluations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.step)


@dataclass(frozen=True)
class LineSearchResult:
    step: float  # signed; negative when the mirrored candidate won
    value: float
    stalled: bool
    evaluations: int


class SumRateProblem:
    """Sum-rate objective and its analytic gradient for one stack/channel pair."""

    def __init__(self, stack: PropagationStack, H, noise: NoiseBudget, U):
        self.stack = stack
        self.H = np.asarray(H, dtype=complex)
        self.noise = noise
        self.U = np.asarray(U)
        N, K = self.H.shape
        if N != stack.N:
            raise ValueError(f"channel has N={N}, stack has N={stack.N}")
        if stack.M < K:
            raise ValueError(f"stack has M={stack.M} DPA elements, need one per user (K={K})")
        self.K = K
        self.sigma = self.U @ self.U.conj().T
        self.scale = insertion_loss_factor(noise.T_sim, stack.layer_count)
        self.shape = (stack.layer_count, N)
        self.evaluations = 0

    def combiner_rows(self, theta: np.ndarray) -> np.ndarray:
        phasors = np.exp(1j * theta)
        mats = self.stack.matrices
        G = mats[0][: self.K] * phasors[0]
        for P, w in zip(mats[1:], phasors[1:]):
            G = (G @ P) * w
        return self.scale * G

    def _terms(self, G: np.ndarray):
        nb = self.noise
        Y = G @ self.H
        absY2 = np.abs(Y) ** 2
        own = np.eye(self.K, dtype=bool)
        S = nb.P_T * np.diag(absY2)
        interference = nb.P_T * np.where(own, 0.0, absY2).sum(axis=1)
        colored = nb.sigma2_ant * np.real(np.einsum("kn,nm,km->k", G.conj(), self.sigma, G))
        Z = interference + colored + nb.sigma2_rf
        gamma = np.divide(S, Z, out=np.zeros_like(S), where=Z > 0)
        return Y, S, Z, gamma

    def value(self, theta: np.ndarray) -> float:
        self.evaluations += 1
        gamma = self._terms(self.combiner_rows(theta))[3]
        return float(np.sum(np.log2(1.0 + gamma)))

    def value_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        self.evaluations += 1
        theta = np.asarray(theta, dtype=float)
        K, H, nb = self.K, self.H, self.noise
        mats = self.stack.matrices
        L = len(mats)
        phasors = np.exp(1j * theta)

        # prefix[l] = rows of P1 W1 P2 ... W(l-1) P(l)   (layers 0-indexed)
        prefix = [mats[0][:K]]
        for l in range(1, L):
            prefix.append((prefix[-1] * phasors[l - 1]) @ mats[l])
        G = self.scale * prefix[-1] * phasors[-1]

        Y, S, Z, gamma = self._terms(G)
        own = np.eye(K, dtype=bool)
        value = float(np.sum(np.log2(1.0 + gamma)))

        a = 1.0 / (LN2 * (1.0 + gamma))
        Zsafe = np.where(Z > 0, Z, 1.0)
        # weights on |Y_kj|^2 and on g_k Sigma g_k^H
        w_pair = np.where(own, nb.P_T / Zsafe[:, None], -nb.P_T * (S / Zsafe**2)[:, None])
        w_col = -nb.sigma2_ant * S / Zsafe**2
        w_pair = a[:, None] * w_pair * Y.conj()
        w_col = a * w_col

        # suffix applied to [H, Sigma G^H], swept from the outermost layer inward
        right = np.concatenate([H, self.sigma @ G.conj().T], axis=1)
        grad = np.empty(self.shape)
        for l in range(L - 1, -1, -1):
            E = w_pair @ right[:, :K].T + w_col[:, None] * right[:, K:].T
            T = (1j * self.scale) * prefix[l] * phasors[l]
            grad[l] = 2.0 * np.real(np.sum(T * E, axis=0))
            if l > 0:
                right = mats[l] @ (phasors[l][:, None] * right)
        return value, grad


def analytic_gradient(stack: PropagationStack, phases, H, noise: NoiseBudget, U) -> np.ndarray:
    theta = phases.theta if isinstance(phases, PhaseProfile) else np.asarray(phases, dtype=float)
    return SumRateProblem(stack, H, noise, U).value_and_gradient(theta)[1]


def normalize_gradient(grad: np.ndarray) -> np.ndarray:
    """Divide each layer (row) by its largest absolute entry; all-zero layers are left alone."""
    grad = np.atleast_2d(np.asarray(grad, dtype=float))
    rho = np.max(np.abs(grad), axis=1, keepdims=True)
    return np.divide(grad, rho, out=grad.copy(), where=rho > 0)


def two_way_backtracking(
    objective: Objective,
    theta: np.ndarray,
    direction: np.ndarray,
    step0: float,
    config: OptimizerConfig,
    gradient: np.ndarray | None = None,
    value: float | None = None,
) -> LineSearchResult:
    """Armijo step along ``direction``, grown while it keeps holding, shrunk otherwise.

    ``gradient`` defaults to ``direction`` when omitted (pure gradient step).
    """
    evals = 0
    if value is None:
        value = objective(theta)
        evals += 1
    gradient = direction if gradient is None else gradient
    slope = float(np.sum(gradient * direction))
    if not np.isfinite(slope) or slope <= 0:
        return LineSearchResult(0.0, value, True, evals)

    c, shrink = config.armijo_c, config.backtrack_factor

    def trial(mu):
        nonlocal evals
        evals += 1
        return objective(theta + mu * direction)

    mu = step0
    f = trial(mu)
    if f >= value + c * mu * slope:
        best_mu, best_f = mu, f
        for _ in range(config.max_expansions):
            mu = best_mu / shrink
            f = trial(mu)
            if f < value + c * mu * slope:
                break
            best_mu, best_f = mu, f
    else:
        while True:
            mu *= shrink
            if mu < config.min_step:
                return LineSearchResult(0.0, value, True, evals)
            f = trial(mu)
            if f >= value + c * mu * slope:
                best_mu, best_f = mu, f
                break

    if config.mirror_probe:
        f_mirror = trial(-best_mu)
        if f_mirror > best_f:
            return LineSearchResult(-best_mu, f_mirror, False, evals)
    return LineSearchResult(best_mu, best_f, False, evals)


def _stagnated(values: list[float], config: OptimizerConfig) -> bool:
    if len(values) <= config.patience:
        return False
    old, new = values[-1 - config.patience], values[-1]
    return (new - old) <= config.rel_improvement_tol * max(abs(old), np.finfo(float).tiny)


def ascend_gradient(
    objective: Objective,
    value_and_gradient: ObjectiveGrad,
    theta0: np.ndarray,
    config: OptimizerConfig,
) -> tuple[np.ndarray, OptimizerTrace]:
    theta = np.array(theta0, dtype=float, ndmin=2)
    trace = OptimizerTrace()
    value, grad = value_and_gradient(theta)
    trace.sum_rate.append(value)
    step = config.alpha_init
    for _ in range(config.max_iterations):
        trace.grad_norms.append(np.linalg.norm(grad, axis=1))
        direction = normalize_gradient(grad)
        if not np.any(direction):
            trace.termination = "stationary"
            break
        start = step if config.warm_start_step else config.alpha_init
        ls = two_way_backtracking(objective, theta, direction, start, config, gradient=grad, value=value)
        trace.evaluations += ls.evaluations
        if ls.stalled:
            trace.termination = "stalled"
            break
        theta = theta + ls.step * direction
        step = abs(ls.step)
        value, grad = value_and_gradient(theta)
        trace.sum_rate.append(value)
        trace.step.append(ls.step)
        if _stagnated(trace.sum_rate, config):
            trace.termination = "converged"
            break
    else:
        trace.termination = "max_iterations"
    return theta, trace


def _two_loop(grad: np.ndarray, s_hist: list, y_hist: list) -> np.ndarray:
    """Inverse-Hessian-times-vector for the negated objective (L-BFGS two-loop recursion)."""
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / np.dot(y, s)
        alpha = rho * np.dot(s, q)
        q -= alpha * y
        alphas.append((rho, alpha))
    s, y = s_hist[-1], y_hist[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, alpha) in zip(zip(s_hist, y_hist), reversed(alphas)):
        beta = rho * np.dot(y, q)
        q += (alpha - beta) * s
    return q


def ascend_quasi_newton(
    objective: Objective,
    value_and_gradient: ObjectiveGrad,
    theta0: np.ndarray,
    config: OptimizerConfig,
) -> tuple[np.ndarray, OptimizerTrace]:
    theta = np.array(theta0, dtype=float, ndmin=2)
    shape = theta.shape
    trace = OptimizerTrace()
    value, grad = value_and_gradient(theta)
    trace.sum_rate.append(value)
    ls_config = replace(config, max_expansions=0, mirror_probe=False)
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    for _ in range(config.max_iterations):
        g = grad.ravel()
        trace.grad_norms.append(np.linalg.norm(grad, axis=1))
        gmax = np.max(np.abs(g))
        if gmax == 0:
            trace.termination = "stationary"
            break
        direction = _two_loop(g, s_hist, y_hist) if s_hist else g / gmax
        if not np.dot(direction, g) > 0:
            s_hist.clear(), y_hist.clear()
            direction = g / gmax
        step0 = 1.0 if s_hist else config.alpha_init
        ls = two_way_backtracking(
            objective, theta, direction.reshape(shape), step0, ls_config, gradient=grad, value=value
        )
        trace.evaluations += ls.evaluations
        if ls.stalled:
            if s_hist:
                # curvature model failed to produce an ascent step: restart from the gradient
                s_hist.clear(), y_hist.clear()
                continue
            trace.termination = "stalled"
            break
        new_theta = theta + ls.step * direction.reshape(shape)
        new_value, new_grad = value_and_gradient(new_theta)
        s = (new_theta - theta).ravel()
        y = (grad - new_grad).ravel()  # gradient change of the negated objective
        if np.dot(s, y) > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > config.memory:
                s_hist.pop(0), y_hist.pop(0)
        else:
            s_hist.clear(), y_hist.clear()
        theta, value, grad = new_theta, new_value, new_grad
        trace.sum_rate.append(value)
        trace.step.append(ls.step)
        if _stagnated(trace.sum_rate, config):
            trace.termination = "converged"
            break
    else:
        trace.termination = "max_iterations"
    return theta, trace


def _initial_theta(stack: PropagationStack, config: OptimizerConfig, init) -> np.ndarray:
    if init is None:
        rng = np.random.default_rng(config.seed)
        return PhaseProfile.random(stack.layer_count, stack.N, rng).theta
    if isinstance(init, PhaseProfile):
        return init.theta
    return PhaseProfile(init).theta


def gradient_ascent(
    stack: PropagationStack,
    H,
    noise: NoiseBudget,
    config: OptimizerConfig,
    init=None,
    U=None,
) -> tuple[PhaseProfile, OptimizerTrace]:
    """Maximise the sum-rate by normalised gradient ascent from ``init`` (random if omitted).

    ``U`` is the receive-correlation factor; identity (white antenna noise) if omitted.
    """
    problem = SumRateProblem(stack, H, noise, np.eye(stack.N) if U is None else U)
    theta, trace = ascend_gradient(
        problem.value, problem.value_and_gradient, _initial_theta(stack, config, init), config
    )
    return PhaseProfile(theta), trace


def quasi_newton(
    stack: PropagationStack,
    H,
    noise: NoiseBudget,
    config: OptimizerConfig,
    init=None,
    U=None,
) -> tuple[PhaseProfile, OptimizerTrace]:
    problem = SumRateProblem(stack, H, noise, np.eye(stack.N) if U is None else U)
    theta, trace = ascend_quasi_newton(
        problem.value, problem.value_and_gradient, _initial_theta(stack, config, init), config
    )
    return PhaseProfile(theta), trace
