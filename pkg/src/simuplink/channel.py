"""Correlated Rayleigh channels, path loss and the receiver noise budget."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOLTZMANN = 1.380649e-23
NOISE_SOLID_ANGLE = 2.0 * np.pi
EIGEN_FLOOR = 1e-10

# stream tags keep RNG draws for different purposes independent
STREAM_PLACEMENT = 0
STREAM_SIM_CHANNEL = 1
STREAM_DPA_CHANNEL = 2
STREAM_INIT = 3


class ChannelError(ValueError):
    pass


def rng_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Generator keyed by ``(master_seed, *key)``; independent of call order."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, key)]))


@dataclass(frozen=True)
class CorrelationModel:
    """Receive correlation ``sigma`` and a factor with ``factor @ factor.conj().T == sigma``."""

    sigma: np.ndarray
    factor: np.ndarray

    @property
    def N(self) -> int:
        return self.sigma.shape[0]


@dataclass(frozen=True)
class NoiseBudget:
    sigma2_ant: float
    sigma2_rf: float
    P_T: float
    A_eff: float
    T_sim: float = 1.0

    def __post_init__(self):
        for name in ("sigma2_ant", "P_T", "A_eff"):
            if not getattr(self, name) > 0:
                raise ChannelError(f"{name} must be positive, got {getattr(self, name)!r}")
        if not self.sigma2_rf >= 0:
            raise ChannelError(f"sigma2_rf must be non-negative, got {self.sigma2_rf!r}")
        if not 0 < self.T_sim <= 1:
            raise ChannelError(f"T_sim must lie in (0, 1], got {self.T_sim!r}")


@dataclass(frozen=True)
class ChannelEnsemble:
    H: np.ndarray  # (N, K) complex
    beta: np.ndarray  # (K,)
    user_positions: np.ndarray | None = None  # (K, 3)
    placement_id: int = 0
    realization_id: int = 0

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def K(self) -> int:
        return self.H.shape[1]


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def correlation_factor(sigma: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of ``sigma`` after flooring its eigenvalues at 1e-10."""
    w, V = np.linalg.eigh(sigma)
    if w.min() < EIGEN_FLOOR:
        sigma = (V * np.maximum(w, EIGEN_FLOOR)) @ V.T
        sigma = 0.5 * (sigma + sigma.T)
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        # rounding can still defeat Cholesky on near-singular inputs
        return V * np.sqrt(np.maximum(w, EIGEN_FLOOR))


def build_correlation(positions: np.ndarray, wavelength: float) -> CorrelationModel:
    """3-D isotropic scattering correlation ``sinc(2 d / wavelength)``."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[0] < 1:
        raise ChannelError("need at least one position")
    sigma = np.sinc(2.0 * pairwise_distances(positions) / wavelength)
    np.fill_diagonal(sigma, 1.0)
    return CorrelationModel(sigma=sigma, factor=correlation_factor(sigma))


def standard_complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def build_channel(
    correlation: CorrelationModel,
    beta,
    noise: NoiseBudget,
    rng: np.random.Generator,
    amplitude_scale: float = 1.0,
    **ids,
) -> ChannelEnsemble:
    """Kronecker channel ``factor @ Hw @ diag(sqrt(beta * A_eff))``.

    ``amplitude_scale`` multiplies the whole matrix (used for antenna
    efficiency).  Extra keyword arguments (``placement_id``,
    ``realization_id``, ``user_positions``) are stored on the ensemble.
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.ndim != 1 or np.any(beta <= 0):
        raise ChannelError("beta must be a 1-D vector of positive path gains")
    Hw = standard_complex_normal(rng, (correlation.N, beta.size))
    col_scale = amplitude_scale * np.sqrt(beta * noise.A_eff)
    return ChannelEnsemble(H=(correlation.factor @ Hw) * col_scale, beta=beta, **ids)


def path_loss(distance, exponent: float = 3.67, reference_loss_db: float = 52.7):
    """Log-distance power gain; ``reference_loss_db`` is the loss at 1 m."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise ChannelError("distance must be positive")
    loss_db = reference_loss_db + 10.0 * exponent * np.log10(distance)
    return 10.0 ** (-loss_db / 10.0)


def antenna_noise_power(A_eff: float, wavelength: float, bandwidth: float, T_env: float = 290.0) -> float:
    return BOLTZMANN * T_env * bandwidth * (A_eff / wavelength**2) * NOISE_SOLID_ANGLE


def rf_noise_power(bandwidth: float, T_bs: float = 290.0, noise_figure_db: float = 18.8) -> float:
    """Input-referred RF-chain noise, so the chain gain never enters the SINR."""
    F = 10.0 ** (noise_figure_db / 10.0)
    return BOLTZMANN * T_bs * bandwidth * (F - 1.0)


def dbm_per_m2_to_w(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def place_users(
    K: int,
    rng: np.random.Generator,
    min_distance: float = 20.0,
    max_distance: float = 200.0,
    height_offset: float = 0.0,
) -> np.ndarray:
    """User positions in the antenna's front half-space (+z), relative to the aperture centre."""
    d = rng.uniform(min_distance, max_distance, size=K)
    azimuth = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=K)
    horizontal = np.sqrt(np.maximum(d**2 - height_offset**2, 0.0))
    return np.column_stack([horizontal * np.sin(azimuth), np.full(K, height_offset), horizontal * np.cos(azimuth)])
