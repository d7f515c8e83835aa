"""SIM layout and dipole-model inter-layer propagation matrices.

Coordinates: the DPA plane is z = 0 and layer ``l`` (1-based) sits at
``z = l * t_sim / L``; every plane is parallel to xy and the unit-cell grids
are aligned.  Unit-cells and DPA elements radiate as Hertzian dipoles whose
axis lies in the layer plane, so boresight (+z) is the dipole's equatorial
direction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# (3 sqrt(2) / 8 pi): squared-amplitude normalisation of the dipole pattern
DIPOLE_POWER_NORM = 3.0 * np.sqrt(2.0) / (8.0 * np.pi)

_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0])}


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalConstants:
    carrier_frequency: float = 3e9
    bandwidth: float = 20e6

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength


@dataclass(frozen=True)
class Geometry:
    aperture_side: float
    cell_pitch: float
    layer_count: int
    sim_thickness: float
    dpa_element_positions: np.ndarray  # (M, 3)
    layer_cell_positions: tuple[np.ndarray, ...]  # L arrays of shape (N, 3)
    dipole_axis: str = "x"

    @property
    def cells_per_layer(self) -> int:
        return self.layer_cell_positions[0].shape[0]

    @property
    def dpa_count(self) -> int:
        return self.dpa_element_positions.shape[0]

    @property
    def layer_spacing(self) -> float:
        return self.sim_thickness / self.layer_count

    @property
    def outer_layer_positions(self) -> np.ndarray:
        """Cells facing the users; the channel ``H`` is defined on these."""
        return self.layer_cell_positions[-1]


def _grid_side(extent: float, pitch: float) -> int:
    ratio = extent / pitch
    side = int(round(ratio))
    if side < 1 or abs(ratio - side) > 1e-9 * max(1.0, ratio):
        raise GeometryError(
            f"aperture side / cell pitch = {ratio!r} is not a positive integer"
        )
    return side


def square_grid(side_count: int, pitch: float, z: float = 0.0) -> np.ndarray:
    """Centres of a ``side_count x side_count`` grid centred on the z axis, row-major in (y, x)."""
    offsets = (np.arange(side_count) - (side_count - 1) / 2.0) * pitch
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(side_count**2, z)])


def dpa_positions(
    M: int,
    wavelength: float,
    aperture_side: float,
    layout: str | Sequence[Sequence[float]] = "linear_half_wavelength",
) -> np.ndarray:
    """Element positions of a DPA in the z = 0 plane, centred on the aperture axis."""
    if M < 1:
        raise GeometryError(f"M must be >= 1, got {M}")
    half = wavelength / 2.0
    if isinstance(layout, str):
        if layout == "linear_half_wavelength":
            x = (np.arange(M) - (M - 1) / 2.0) * half
            pos = np.column_stack([x, np.zeros(M), np.zeros(M)])
        elif layout == "grid_half_wavelength":
            side = int(round(np.sqrt(M)))
            if side * side != M:
                raise GeometryError(f"grid layout needs a square element count, got M={M}")
            pos = square_grid(side, half)
        else:
            raise GeometryError(f"unknown DPA layout {layout!r}")
    else:
        pos = np.asarray(layout, dtype=float)
        if pos.shape != (M, 3):
            raise GeometryError(f"explicit DPA layout must have shape ({M}, 3), got {pos.shape}")
    if np.any(np.abs(pos[:, :2]) > aperture_side / 2.0 + 1e-12):
        raise GeometryError(f"{M} elements with layout {layout!r} do not fit inside the aperture")
    return pos


def build_geometry(
    constants: PhysicalConstants,
    aperture_side: float,
    cell_pitch: float,
    L: int,
    t_sim: float,
    M: int,
    dpa_layout: str | Sequence[Sequence[float]] = "linear_half_wavelength",
    dipole_axis: str = "x",
) -> Geometry:
    if L < 1:
        raise GeometryError(f"layer count must be >= 1, got {L}")
    if t_sim <= 0:
        raise GeometryError(f"SIM thickness must be positive, got {t_sim}")
    if dipole_axis not in _AXES:
        raise GeometryError(f"dipole axis must be 'x' or 'y', got {dipole_axis!r}")
    side = _grid_side(aperture_side, cell_pitch)
    spacing = t_sim / L
    layers = tuple(square_grid(side, cell_pitch, z=(l + 1) * spacing) for l in range(L))
    dpa = dpa_positions(M, constants.wavelength, aperture_side, dpa_layout)
    return Geometry(
        aperture_side=aperture_side,
        cell_pitch=cell_pitch,
        layer_count=L,
        sim_thickness=t_sim,
        dpa_element_positions=dpa,
        layer_cell_positions=layers,
        dipole_axis=dipole_axis,
    )


def _separation(source, target):
    diff = np.asarray(target, dtype=float) - np.asarray(source, dtype=float)
    r = np.linalg.norm(diff, axis=-1)
    if np.any(r <= 0):
        raise GeometryError("source and target coincide (zero distance)")
    return diff, r


def dipole_amplitude(theta, r):
    """Field amplitude of the normalised dipole pattern at zenith angle ``theta`` and range ``r``."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise GeometryError("distance must be positive")
    return np.sqrt(DIPOLE_POWER_NORM * np.sin(theta) ** 2 / r**2)


def propagation_amplitude(source, target, dipole_axis=_AXES["x"]):
    """Amplitude coupling from a dipole at ``source`` (axis ``dipole_axis``) to ``target``.

    Broadcasts over leading dimensions of ``source``/``target``.
    """
    diff, r = _separation(source, target)
    axis = np.asarray(dipole_axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    cos_t = (diff @ axis) / r
    sin2 = np.clip(1.0 - cos_t**2, 0.0, 1.0)
    return np.sqrt(DIPOLE_POWER_NORM * sin2) / r


def wrap_phase(phase):
    """Reduce to (-pi, pi]."""
    wrapped = np.mod(phase + np.pi, 2.0 * np.pi) - np.pi
    return np.where(wrapped == -np.pi, np.pi, wrapped)


def phase_from_kr(kr):
    kr = np.asarray(kr, dtype=float)
    correction = 1.0 + 1.0 / (1j * kr) - 1.0 / kr**2
    return wrap_phase(np.pi / 2.0 - kr + np.angle(correction))


def propagation_phase(source, target, k0: float):
    _, r = _separation(source, target)
    return phase_from_kr(k0 * r)


def coupling_matrix(sources: np.ndarray, targets: np.ndarray, k0: float, dipole_axis: str = "x"):
    """Complex coupling, shape (len(targets), len(sources))."""
    diff = targets[:, None, :] - sources[None, :, :]
    amp = propagation_amplitude(np.zeros_like(diff), diff, _AXES[dipole_axis])
    r = np.linalg.norm(diff, axis=-1)
    return amp * np.exp(1j * phase_from_kr(k0 * r))


NORMALIZATIONS = ("pointwise", "capture_area", "passive")


@dataclass(frozen=True)
class PropagationStack:
    """``matrices[0]`` is P^1 (M x N); ``matrices[l]`` couples layer l+1 into layer l (N x N)."""

    matrices: tuple[np.ndarray, ...]
    normalization: str = "pointwise"

    def __post_init__(self):
        for P in self.matrices:
            P.setflags(write=False)

    @property
    def layer_count(self) -> int:
        return len(self.matrices)

    @property
    def M(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def N(self) -> int:
        return self.matrices[0].shape[1]


def build_propagation_stack(
    geometry: Geometry,
    constants: PhysicalConstants,
    normalization: str = "pointwise",
    dpa_capture_area: float | None = None,
) -> PropagationStack:
    """Dipole-model propagation matrices for the whole stack.

    ``normalization`` selects how point couplings become matrix entries:

    ``"pointwise"``
        amplitude * exp(j phase) as is, in 1/m.
    ``"capture_area"``
        additionally times the square root of the receiving element's area
        (``cell_pitch**2`` for unit-cells, ``dpa_capture_area`` for DPA
        elements, defaulting to the cell area), making each hop
        dimensionless: a column's squared norm is the share of one cell's
        forward radiation that the receiving elements intercept.
    ``"passive"``
        capture-area entries, with every matrix whose spectral norm exceeds
        one scaled down to norm one.  Point dipoles packed closer than a
        wavelength superpose coherently without the mutual coupling that
        would limit them, so an unscaled hop can return more power than it
        was given.
    """
    if normalization not in NORMALIZATIONS:
        raise GeometryError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    k0 = constants.wavenumber
    layers = geometry.layer_cell_positions
    axis = geometry.dipole_axis
    # uplink direction: layer 1 radiates into the DPA (reciprocity)
    mats = [coupling_matrix(layers[0], geometry.dpa_element_positions, k0, axis)]
    for l in range(1, geometry.layer_count):
        mats.append(coupling_matrix(layers[l], layers[l - 1], k0, axis))
    if normalization != "pointwise":
        cell_area = geometry.cell_pitch**2
        dpa_area = cell_area if dpa_capture_area is None else dpa_capture_area
        mats[0] = mats[0] * np.sqrt(dpa_area)
        mats[1:] = [P * np.sqrt(cell_area) for P in mats[1:]]
    if normalization == "passive":
        mats = [P / max(1.0, np.linalg.norm(P, 2)) for P in mats]
    return PropagationStack(matrices=tuple(mats), normalization=normalization)
