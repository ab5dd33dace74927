"""Exact near-field array geometry.

Positions are plain length-3 float arrays (meters). An orientation vector
points from a reference antenna toward the adjacent scatterer of a path; the
per-element distance of an element offset ``o`` from the reference is then
``|| d_ref * omega - o ||``, which is the convention forced by the
spherical-coordinate distance expansion used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import C

# Two points closer than this are treated as coincident (degenerate geometry).
COINCIDENCE_TOL = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when a geometric construction collapses (coincident points,
    element sitting exactly on a scatterer, non-positive delays)."""


def vec3(x, y, z):
    """Build a length-3 float position/direction vector."""
    return np.array([float(x), float(y), float(z)])


def as_vec3(v, name="vector"):
    """Validate and return ``v`` as a finite (3,) float array."""
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components: {arr}")
    return arr


def _unit(v, name="vector"):
    n = float(np.linalg.norm(v))
    if n < COINCIDENCE_TOL:
        raise DegenerateGeometryError(f"cannot normalize near-zero {name}")
    return v / n


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, used for scene bounds and candidate-grid bounds."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", as_vec3(self.lo, "box lo"))
        object.__setattr__(self, "hi", as_vec3(self.hi, "box hi"))
        if np.any(self.hi < self.lo):
            raise ValueError("box hi must be >= lo componentwise")

    def contains(self, points, tol=1e-9):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lo - tol) & (pts <= self.hi + tol), axis=1)

    @property
    def extent(self):
        return self.hi - self.lo


@dataclass(frozen=True)
class Pose:
    """Rigid placement: origin plus a right-handed orthonormal basis.

    ``basis`` rows are the three axes; an array's element lattice spans the
    first two, so the third is the boresight normal.
    """

    origin: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", as_vec3(self.origin, "pose origin"))
        basis = np.asarray(self.basis, dtype=float)
        if basis.shape != (3, 3):
            raise ValueError(f"pose basis must be 3x3, got {basis.shape}")
        if not np.allclose(basis @ basis.T, np.eye(3), atol=1e-9):
            raise ValueError("pose basis must be orthonormal within 1e-9")
        if np.linalg.det(basis) < 0.0:
            raise ValueError("pose basis must be right-handed")
        object.__setattr__(self, "basis", basis)

    @classmethod
    def identity(cls, origin=(0.0, 0.0, 0.0)):
        return cls(origin=np.asarray(origin, dtype=float), basis=np.eye(3))

    @classmethod
    def facing(cls, origin, target, up=(0.0, 0.0, 1.0)):
        """Pose whose boresight (third axis) points from origin to target."""
        origin = as_vec3(origin, "origin")
        boresight = _unit(as_vec3(target, "target") - origin, "boresight")
        up = as_vec3(up, "up")
        right = np.cross(up, boresight)
        if np.linalg.norm(right) < COINCIDENCE_TOL:
            # boresight parallel to up; fall back to a perpendicular axis
            right = np.cross(np.array([1.0, 0.0, 0.0]), boresight)
            if np.linalg.norm(right) < COINCIDENCE_TOL:
                right = np.cross(np.array([0.0, 1.0, 0.0]), boresight)
        right = _unit(right, "right axis")
        down = np.cross(boresight, right)
        return cls(origin=origin, basis=np.vstack([right, down, boresight]))


@dataclass(frozen=True)
class ArraySpec:
    """Uniform planar array: rows x cols elements at fixed spacing.

    The reference element defaults to the one nearest the lattice centroid
    (lowest index on ties); it plays the role of the reference antenna in all
    path geometry.
    """

    rows: int
    cols: int
    spacing: float
    pose: Pose
    reference_index: int = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("rows and cols must be positive")
        if not self.spacing > 0.0:
            raise ValueError("element spacing must be > 0")
        if self.reference_index is None:
            object.__setattr__(self, "reference_index", self._default_reference())
        ref = int(self.reference_index)
        if not 0 <= ref < self.rows * self.cols:
            raise ValueError(
                f"reference_index {ref} out of range for {self.rows}x{self.cols} array"
            )
        object.__setattr__(self, "reference_index", ref)

    def _default_reference(self):
        # nearest lattice point to the centroid; lowest index wins ties
        r = (self.rows - 1) // 2
        c = (self.cols - 1) // 2
        return r * self.cols + c

    @property
    def num_elements(self):
        return self.rows * self.cols


def element_positions(array: ArraySpec) -> np.ndarray:
    """Positions of all elements, shape (rows*cols, 3), row-major over
    (row, col), lattice centered on the pose origin."""
    r_idx = np.arange(array.rows) - (array.rows - 1) / 2.0
    c_idx = np.arange(array.cols) - (array.cols - 1) / 2.0
    uu, vv = np.meshgrid(c_idx, r_idx)  # u along basis[0] (cols), v along basis[1]
    offsets = (
        uu.reshape(-1, 1) * array.pose.basis[0] + vv.reshape(-1, 1) * array.pose.basis[1]
    ) * array.spacing
    return array.pose.origin + offsets


def reference_position(array: ArraySpec) -> np.ndarray:
    """Position of the array's reference element."""
    return element_positions(array)[array.reference_index]


def aperture_diameter(array: ArraySpec) -> float:
    """Aperture size: the maximum pairwise distance among element positions."""
    pos = element_positions(array)
    if len(pos) == 1:
        return 0.0
    diff = pos[:, None, :] - pos[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).max())


def rayleigh_distance(aperture_d: float, wavelength: float) -> float:
    """Near/far-field boundary 2*D^2/lambda for aperture D at wavelength lambda."""
    if not wavelength > 0.0:
        raise ValueError("wavelength must be > 0")
    if aperture_d < 0.0:
        raise ValueError("aperture must be >= 0")
    return 2.0 * aperture_d**2 / wavelength


@dataclass(frozen=True)
class PathGeometry:
    """Reference-path geometry of one multipath component.

    ``hops`` are the interaction points in propagation order; ``tau_ref`` is
    the full polyline delay between the reference antennas. ``omega_tx`` and
    ``omega_rx`` point from the respective reference antenna toward the
    adjacent (first/last) hop.
    """

    hops: np.ndarray       # (k, 3)
    tau_ref: float         # seconds
    d_tx: float            # meters, reference Tx to first hop
    d_rx: float            # meters, last hop to reference Rx
    omega_tx: np.ndarray   # unit (3,)
    omega_rx: np.ndarray   # unit (3,)

    @property
    def bounce_order(self):
        return len(self.hops)


def path_geometry(tx_ref, rx_ref, hops) -> PathGeometry:
    """Build the reference-path record for Tx_ref -> hops... -> Rx_ref.

    Raises ``DegenerateGeometryError`` if consecutive polyline points
    coincide (within 1e-9 m).
    """
    tx_ref = as_vec3(tx_ref, "tx_ref")
    rx_ref = as_vec3(rx_ref, "rx_ref")
    hops_arr = np.atleast_2d(np.asarray(hops, dtype=float))
    if hops_arr.ndim != 2 or hops_arr.shape[1] != 3 or hops_arr.shape[0] < 1:
        raise ValueError("hops must be a non-empty list of 3D points")
    points = np.vstack([tx_ref, hops_arr, rx_ref])
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len < COINCIDENCE_TOL):
        raise DegenerateGeometryError("coincident consecutive points on path polyline")
    total = float(seg_len.sum())
    d_tx = float(seg_len[0])
    d_rx = float(seg_len[-1])
    return PathGeometry(
        hops=hops_arr,
        tau_ref=total / C,
        d_tx=d_tx,
        d_rx=d_rx,
        omega_tx=(hops_arr[0] - tx_ref) / d_tx,
        omega_rx=(hops_arr[-1] - rx_ref) / d_rx,
    )


def _check_unit(omega, name="omega"):
    omega = as_vec3(omega, name)
    if abs(float(np.linalg.norm(omega)) - 1.0) > 1e-9:
        raise ValueError(f"{name} must be unit-norm within 1e-9")
    return omega


def per_element_distance(d_ref: float, omega_ref, element_offset) -> float:
    """Distance from the adjacent scatterer to an element offset from the
    reference antenna: ``|| d_ref * omega_ref - offset ||``."""
    if not d_ref > 0.0:
        raise ValueError("d_ref must be > 0")
    omega_ref = _check_unit(omega_ref, "omega_ref")
    offset = as_vec3(element_offset, "element_offset")
    return float(np.linalg.norm(d_ref * omega_ref - offset))


def per_element_orientation(d_ref: float, omega_ref, element_offset) -> np.ndarray:
    """Unit orientation vector seen by an offset element,
    ``(d_ref * omega_ref - offset) / d_elem``."""
    if not d_ref > 0.0:
        raise ValueError("d_ref must be > 0")
    omega_ref = _check_unit(omega_ref, "omega_ref")
    offset = as_vec3(element_offset, "element_offset")
    diff = d_ref * omega_ref - offset
    d_elem = float(np.linalg.norm(diff))
    if d_elem < COINCIDENCE_TOL:
        raise DegenerateGeometryError("element coincides with the scatterer position")
    return diff / d_elem


def per_element_delay(tau_ref: float, dtau_tx: float, dtau_rx: float) -> float:
    """Total per-element delay: reference delay plus both element offsets."""
    if not tau_ref > 0.0:
        raise ValueError("tau_ref must be > 0")
    tau = tau_ref + dtau_tx + dtau_rx
    if tau <= 0.0:
        raise DegenerateGeometryError("per-element delay must stay positive")
    return tau


def sns_amplitude(tau_ref: float, tau_elem: float) -> float:
    """Spatial non-stationarity amplitude: delay ratio tau_ref / tau_elem."""
    if not tau_elem > 0.0:
        raise ValueError("tau_elem must be > 0")
    return tau_ref / tau_elem


@dataclass(frozen=True)
class PerElementGeometry:
    """One element's view of a path side, with the pair-level SNS amplitude."""

    d_elem: float          # meters to the adjacent scatterer
    omega_elem: np.ndarray  # unit (3,)
    dtau: float            # seconds, (d_elem - d_ref)/c
    dalpha: float          # SNS amplitude of the (m, n) pair


def element_geometry(d_ref, omega_ref, element_offset, tau_ref, dtau_other=0.0):
    """Per-element record for one side of a path.

    ``dtau_other`` is the delay offset already accumulated on the opposite
    side, so ``dalpha`` is the full pair-level SNS amplitude.
    """
    d_elem = per_element_distance(d_ref, omega_ref, element_offset)
    omega_elem = per_element_orientation(d_ref, omega_ref, element_offset)
    dtau = (d_elem - d_ref) / C
    tau_elem = per_element_delay(tau_ref, dtau, dtau_other)
    return PerElementGeometry(
        d_elem=d_elem,
        omega_elem=omega_elem,
        dtau=dtau,
        dalpha=sns_amplitude(tau_ref, tau_elem),
    )
