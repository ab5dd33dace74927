"""Baseband measurement-tensor synthesis.

A measurement is a complex MN x PQ matrix: rows enumerate (Tx m, Rx n) pairs
as (n-1)*M + m, columns enumerate (sub-band p, frame q) as (q-1)*P + p (both
1-based in the public index maps). Each path contributes

    dalpha_{m,n} * F_rx * F_tx * exp(-j 2 pi f_p tau_{m,n}) * exp(j 2 pi f_D q T_b)

per entry, with f_p = p * f_s and the Doppler frequency evaluated at the
column's sub-band by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .constants import C
from .geometry import (
    ArraySpec,
    DegenerateGeometryError,
    PathGeometry,
    element_positions,
)


class DimensionMismatchError(ValueError):
    """Raised when tensor dimensions disagree with the configuration."""


@dataclass(frozen=True)
class WaveformSpec:
    """Sounding waveform: P sub-bands of width f_s, Q frames of duration t_frame.

    ``narrowband_doppler`` drops the sub-band term from the Doppler law,
    i.e. uses -f_c*v/c for every column instead of -(f_c + f_p)*v/c.
    """

    f_c: float
    f_s: float
    n_subbands: int
    n_frames: int
    t_frame: float
    narrowband_doppler: bool = False

    def __post_init__(self):
        if not (self.f_c > 0 and self.f_s > 0 and self.t_frame > 0):
            raise ValueError("f_c, f_s and t_frame must be > 0")
        if self.n_subbands < 1 or self.n_frames < 1:
            raise ValueError("n_subbands and n_frames must be >= 1")

    @property
    def wavelength(self):
        return C / self.f_c

    def subband_frequencies(self):
        """f_p = p * f_s for p = 1..P."""
        return self.f_s * np.arange(1, self.n_subbands + 1)


@dataclass(frozen=True)
class PathCoefficients:
    """Reference-channel coefficients of one path."""

    alpha: float
    phi: float
    velocity: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError("alpha must be finite and >= 0")
        object.__setattr__(self, "phi", float(self.phi) % (2.0 * np.pi))

    @property
    def complex_gain(self):
        return self.alpha * np.exp(1j * self.phi)


class AntennaPattern:
    """Antenna gain hook: gain(f_c, unit direction) -> non-negative real.

    The default pattern is isotropic and returns exactly 1 for all inputs.
    """

    def __init__(self, gain_fn: Optional[Callable[[float, np.ndarray], float]] = None):
        self._gain_fn = gain_fn

    @property
    def is_isotropic(self):
        return self._gain_fn is None

    def gain(self, f_c: float, direction: np.ndarray) -> float:
        if self._gain_fn is None:
            return 1.0
        return float(self._gain_fn(f_c, direction))

    def gains(self, f_c: float, directions: np.ndarray) -> np.ndarray:
        """Vectorized gain over an (K, 3) stack of unit directions."""
        if self._gain_fn is None:
            return np.ones(len(directions))
        return np.array([self.gain(f_c, d) for d in directions])


ISOTROPIC = AntennaPattern()


def doppler_frequency(f_c: float, f_p: float, velocity: float) -> float:
    """Doppler shift -(f_c + f_p) * v / c for radial velocity v."""
    if not f_c > 0.0:
        raise ValueError("f_c must be > 0")
    return -(f_c + f_p) * velocity / C


def row_of(m: int, n: int, m_tx: int) -> int:
    """1-based row index (n-1)*M + m of Tx m, Rx n."""
    if not 1 <= m <= m_tx:
        raise ValueError(f"m={m} out of range 1..{m_tx}")
    if n < 1:
        raise ValueError(f"n={n} must be >= 1")
    return (n - 1) * m_tx + m


def col_of(p: int, q: int, n_subbands: int) -> int:
    """1-based column index (q-1)*P + p of sub-band p, frame q."""
    if not 1 <= p <= n_subbands:
        raise ValueError(f"p={p} out of range 1..{n_subbands}")
    if q < 1:
        raise ValueError(f"q={q} must be >= 1")
    return (q - 1) * n_subbands + p


def tx_rx_of(row: int, m_tx: int) -> tuple[int, int]:
    """Inverse of row_of: 1-based (m, n) of a 1-based row index."""
    if row < 1:
        raise ValueError("row must be >= 1")
    m = (row - 1) % m_tx + 1
    n = (row - 1) // m_tx + 1
    return m, n


def subband_frame_of(col: int, n_subbands: int) -> tuple[int, int]:
    """Inverse of col_of: 1-based (p, q) of a 1-based column index."""
    if col < 1:
        raise ValueError("col must be >= 1")
    p = (col - 1) % n_subbands + 1
    q = (col - 1) // n_subbands + 1
    return p, q


@dataclass
class ChannelTensor:
    """Measurement matrix with its index map and provenance metadata."""

    data: np.ndarray  # complex (M*N, P*Q)
    m_tx: int
    n_rx: int
    n_subbands: int
    n_frames: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = (self.m_tx * self.n_rx, self.n_subbands * self.n_frames)
        if self.data.shape != expected:
            raise DimensionMismatchError(
                f"tensor shape {self.data.shape} does not match dims {expected}"
            )

    def vec(self):
        """Row-major vectorization, length M*N*P*Q."""
        return self.data.ravel()

    @property
    def frobenius_norm(self):
        return float(np.linalg.norm(self.data))


def _side_tables(d_ref: float, omega_ref: np.ndarray, array: ArraySpec):
    """Per-element (d_elem, dtau, omega_elem) tables for one side of a path."""
    pos = element_positions(array)
    offsets = pos - pos[array.reference_index]
    diff = d_ref * omega_ref - offsets  # (E, 3)
    d_elem = np.linalg.norm(diff, axis=1)
    if np.any(d_elem < 1e-12):
        raise DegenerateGeometryError("array element coincides with a scatterer")
    omega_elem = diff / d_elem[:, None]
    dtau = (d_elem - d_ref) / C
    return d_elem, dtau, omega_elem


def path_signature(
    path: PathGeometry,
    tx_array: ArraySpec,
    rx_array: ArraySpec,
    wf: WaveformSpec,
    pattern: AntennaPattern = ISOTROPIC,
    velocity: float = 0.0,
) -> np.ndarray:
    """Unit-coefficient per-path factor of the measurement tensor.

    Entry (row(m,n), col(p,q)) is
    dalpha_{m,n} * F_rx * F_tx * exp(-j2pi f_p tau_{m,n}) * exp(j2pi f_D(p) q T_b).
    """
    M = tx_array.num_elements
    N = rx_array.num_elements
    P = wf.n_subbands
    Q = wf.n_frames

    _, dtau_tx, omega_tx = _side_tables(path.d_tx, path.omega_tx, tx_array)
    _, dtau_rx, omega_rx = _side_tables(path.d_rx, path.omega_rx, rx_array)

    # tau_{m,n} arranged (n, m) so the raveled row order is (n-1)*M + m
    tau = path.tau_ref + dtau_rx[:, None] + dtau_tx[None, :]
    if np.any(tau <= 0.0):
        raise DegenerateGeometryError("non-positive per-element delay")
    dalpha = path.tau_ref / tau  # (N, M)

    gains = pattern.gains(wf.f_c, omega_rx)[:, None] * pattern.gains(wf.f_c, omega_tx)[None, :]

    f_p = wf.subband_frequencies()  # (P,)
    phase_delay = np.exp(-2j * np.pi * f_p[None, None, :] * tau[:, :, None])  # (N, M, P)

    if velocity == 0.0:
        dop = np.ones((Q, P), dtype=complex)
    else:
        f_dop = (
            doppler_frequency(wf.f_c, 0.0, velocity) * np.ones(P)
            if wf.narrowband_doppler
            else doppler_frequency(wf.f_c, f_p, velocity)
        )
        q_idx = np.arange(1, Q + 1)
        dop = np.exp(2j * np.pi * f_dop[None, :] * q_idx[:, None] * wf.t_frame)  # (Q, P)

    entries = (
        (dalpha * gains)[:, :, None, None] * phase_delay[:, :, None, :] * dop[None, None, :, :]
    )  # (N, M, Q, P)
    return entries.reshape(M * N, P * Q)


def synthesize_channel(
    paths,
    tx_array: ArraySpec,
    rx_array: ArraySpec,
    wf: WaveformSpec,
    pattern: AntennaPattern = ISOTROPIC,
    snr_db: Optional[float] = None,
    seed: Optional[int] = None,
    meta: Optional[dict] = None,
) -> ChannelTensor:
    """Sum per-path signatures with their coefficients and optional noise.

    ``paths`` is a sequence of (PathGeometry, PathCoefficients). When
    ``snr_db`` is given, circular complex white noise is added with per-entry
    variance calibrated so 10*log10(||signal||^2 / E||noise||^2) = snr_db;
    a seed is then mandatory and fixes the realization bit-exactly.
    """
    M = tx_array.num_elements
    N = rx_array.num_elements
    P = wf.n_subbands
    Q = wf.n_frames
    data = np.zeros((M * N, P * Q), dtype=complex)
    for geometry, coeff in paths:
        data += coeff.complex_gain * path_signature(
            geometry, tx_array, rx_array, wf, pattern, velocity=coeff.velocity
        )

    info = dict(meta or {})
    info.update(
        f_c=wf.f_c,
        f_s=wf.f_s,
        n_subbands=P,
        n_frames=Q,
        t_frame=wf.t_frame,
        narrowband_doppler=wf.narrowband_doppler,
        n_paths=len(paths),
        snr_db=snr_db,
        seed=seed,
    )

    if snr_db is not None:
        if seed is None:
            raise ValueError("seed is mandatory when noise is enabled")
        signal_energy = float(np.sum(np.abs(data) ** 2))
        var = signal_energy / (data.size * 10.0 ** (snr_db / 10.0))
        rng = np.random.default_rng(seed)
        scale = np.sqrt(var / 2.0)
        noise = scale * (
            rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
        )
        data = data + noise

    return ChannelTensor(
        data=data, m_tx=M, n_rx=N, n_subbands=P, n_frames=Q, meta=info
    )
