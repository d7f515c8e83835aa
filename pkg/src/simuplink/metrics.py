"""Per-user SINR and achievable sum-rate of a linear combiner."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import NoiseBudget


@dataclass(frozen=True)
class RateReport:
    gamma: np.ndarray
    per_user_rate: np.ndarray
    signal_power: np.ndarray
    interference_power: np.ndarray
    colored_noise_power: np.ndarray
    rf_noise_power: np.ndarray

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.per_user_rate))


def sinr(G, H, noise: NoiseBudget, U, digital: bool = False) -> RateReport:
    """SINR of each user ``k`` as seen by combiner row ``k``.

    The antenna-noise term ``sigma2_ant * g_k Sigma g_k^H`` is computed as
    ``sigma2_ant * ||g_k U||^2`` with ``U U^H = Sigma``.  For a wave-domain
    combiner the RF-chain noise is added after ``G``; with ``digital=True``
    (DPA baselines) each element's RF chain precedes the combiner and the
    term becomes ``sigma2_rf * ||g_k||^2``.
    """
    G = np.asarray(getattr(G, "G", G))
    H = np.asarray(H)
    N, K = H.shape
    if G.ndim != 2 or G.shape[1] != N:
        raise ValueError(f"combiner shape {G.shape} does not match channel with N={N}")
    if G.shape[0] < K:
        raise ValueError(f"combiner has {G.shape[0]} rows, need one per user (K={K})")
    if U.shape[0] != N:
        raise ValueError(f"correlation factor has {U.shape[0]} rows, channel has N={N}")
    rows = G[:K]
    Y = np.abs(rows @ H) ** 2
    signal = noise.P_T * np.diag(Y).copy()
    interference = noise.P_T * np.where(np.eye(K, dtype=bool), 0.0, Y).sum(axis=1)
    colored = noise.sigma2_ant * np.sum(np.abs(rows @ U) ** 2, axis=1)
    if digital:
        rf = noise.sigma2_rf * np.sum(np.abs(rows) ** 2, axis=1)
    else:
        rf = np.full(K, float(noise.sigma2_rf))
    gamma = signal / (interference + colored + rf)
    return RateReport(
        gamma=gamma,
        per_user_rate=np.log2(1.0 + gamma),
        signal_power=signal,
        interference_power=interference,
        colored_noise_power=colored,
        rf_noise_power=rf,
    )


def sum_rate(report: RateReport) -> float:
    return report.sum_rate


def rate_from_gamma(gamma) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(gamma, dtype=float))))
