import numpy as np
import pytest

from simuplink.channel import NoiseBudget, build_correlation, standard_complex_normal
from simuplink.geometry import PhysicalConstants, PropagationStack, build_geometry, build_propagation_stack


@pytest.fixture
def constants():
    return PhysicalConstants()


def make_instance(rng, L=2, side=3, K=2, normalization="capture_area", sigma2_ant=0.5, sigma2_rf=None):
    """Small stack, correlated channel and noise with every SINR term of order one."""
    c = PhysicalConstants()
    lam = c.wavelength
    pitch = lam / 4.0
    dpa = [[(k - (K - 1) / 2.0) * pitch / 2.0, 0.0, 0.0] for k in range(K)]
    geo = build_geometry(c, side * pitch, pitch, L, 5 * lam, K, dpa_layout=dpa)
    stack = build_propagation_stack(geo, c, normalization=normalization)
    corr = build_correlation(geo.outer_layer_positions, lam)
    H = corr.factor @ standard_complex_normal(rng, (side * side, K))
    if sigma2_rf is None:
        # match the RF noise to the typical combiner output power
        theta = rng.uniform(0, 2 * np.pi, (L, side * side))
        from simuplink.combiner import sim_matrix

        sigma2_rf = float(np.mean(np.abs(sim_matrix(stack, theta, 0.7)) ** 2)) * side * side
    noise = NoiseBudget(sigma2_ant=sigma2_ant, sigma2_rf=sigma2_rf, P_T=1.0, A_eff=pitch**2, T_sim=0.7)
    return stack, H, noise, corr


def random_stack(rng, L, N, M):
    """Unstructured complex stack for purely algebraic tests."""
    mats = [rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))]
    mats += [(rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(N) for _ in range(L - 1)]
    return PropagationStack(matrices=tuple(mats))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
