"""Alternating per-bounce-order estimation with an inner detect/cancel/refine
loop, plus the one-bounce-only baseline that produces ghost scatterers.

The outer loop alternates two matched-dictionary passes per iteration:

    (a)  z1 = z - recon(theta2) - h2    -> theta1 from the one-bounce stream
    (b)  z2 = z - recon(theta1) - h2    -> theta2 from the two-bounce stream
    (c)  h2 = z - recon(theta1) - recon(theta2)

and stops when the relative change of ||h2|| falls below the configured
epsilon or the iteration cap is reached. The remainder h2 is reported as the
higher-bounce residual channel and is never fit parametrically.

Each pass performs successive detection and cancellation: the best-matching
atom is accepted while its match energy exceeds ``gamma`` times the current
residual energy, then each detected path is re-estimated with its
contribution added back (expectation) and re-matched over the dictionary
(maximization). Amplitudes are re-estimated jointly by least squares at the
end of a pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelTensor, DimensionMismatchError
from .dictionary import AtomStream, DictionaryAtom


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the estimator.

    ``detection_threshold`` (gamma) is the ratio of atom match energy to
    current residual energy below which a pass stops; it is calibrated
    against pure-noise runs by scripts/calibrate_threshold.py.
    """

    max_bounce: int = 2                     # maximum modeled bounce order K
    max_paths_per_order: int = 8
    detection_threshold: float = 0.3        # gamma in (0, 1)
    outer_iters: int = 5                    # I_max
    convergence_eps: float = 1e-3           # relative change of ||h2||
    refine_cycles: int = 1
    doppler_grid: Optional[Sequence[float]] = None
    residual_floor_rel: float = 1e-10       # skip scans below this * ||z||
    prune_rel: float = 1e-12                # drop detections with LS energy below
                                            # this fraction of the strongest one
    baseline_max_paths: int = 16
    baseline_stop_ratio: float = 1e-4       # baseline no-progress guard

    def __post_init__(self):
        if not 0.0 < self.detection_threshold < 1.0:
            raise ValueError("detection_threshold must be in (0, 1)")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")
        if self.max_bounce not in (1, 2):
            raise ValueError("max_bounce must be 1 or 2")


@dataclass
class DetectedPath:
    """One detected path: hypothesized vertex coordinates and amplitude."""

    bounce_order: int
    vertex_ids: tuple
    positions: np.ndarray      # (k, 3)
    amplitude: complex         # coefficient on the unit-norm atom
    velocity: float
    energy: float              # |<atom, residual>|^2 at accept time
    atom_index: int


@dataclass
class EstimateReport:
    """Estimator output: detections, residual bookkeeping, iteration count."""

    detected: list
    residual_trace: list            # commit-point residual norms, non-increasing
    residual_channel: np.ndarray    # higher-bounce remainder h2 (vectorized)
    iterations: int
    baseline: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def final_residual_norm(self):
        return float(np.linalg.norm(self.residual_channel))


def _as_vector(z) -> np.ndarray:
    if isinstance(z, ChannelTensor):
        return z.vec().astype(complex)
    vec = np.asarray(z)
    if vec.ndim != 1:
        vec = vec.ravel()
    return vec.astype(complex)


def match_atom(residual: np.ndarray, atoms):
    """Best-matching atom: argmax_i |<atom_i, residual>|^2.

    Returns (atom index, complex amplitude, match energy). Ties break to the
    lowest index. ``atoms`` is an AtomStream (scanned without
    materialization) or any iterable of DictionaryAtom.
    """
    residual = _as_vector(residual)
    if not np.linalg.norm(residual) > 0.0:
        raise ValueError("match_atom requires a non-zero residual")
    if isinstance(atoms, AtomStream):
        return atoms.best_match(residual)
    atoms = list(atoms)
    if len(atoms) == 0:
        raise ValueError("empty atom stream")
    amps = np.array([np.vdot(a.signature, residual) for a in atoms], dtype=complex)
    energies = np.abs(amps) ** 2
    best = int(np.argmax(energies))  # first maximum = lowest index on ties
    return best, complex(amps[best]), float(energies[best])


def _atom_vector(atoms, index: int, cache: dict, velocity: float = 0.0) -> np.ndarray:
    key = (index, velocity)
    if key not in cache:
        if isinstance(atoms, AtomStream):
            cache[key] = atoms.atom_at(index, velocity=velocity).signature
        else:
            cache[key] = atoms[index].signature
    return cache[key]


def _atom_meta(atoms, index: int):
    if isinstance(atoms, AtomStream):
        return atoms.vertex_ids_of(index), atoms.positions_of(index), atoms.k
    a = atoms[index]
    return a.vertex_ids, a.vertex_positions, a.bounce_order


def sage_pass(
    residual: np.ndarray,
    atoms,
    config: EstimatorConfig,
    noise_floor: float = 0.0,
    gamma: Optional[float] = None,
    max_paths: Optional[int] = None,
    min_gain_ratio: float = 0.0,
    atom_cache: Optional[dict] = None,
    trace: Optional[list] = None,
):
    """One SAGE pass over a single dictionary: successive detection and
    cancellation followed by per-path refinement and joint least squares.

    ``noise_floor`` is an absolute residual-energy stop target. Returns
    (detections, residual). The residual norm never increases across accept
    steps; each accepted subtraction reduces the squared norm by exactly the
    match energy (orthogonal projection onto a unit atom).
    """
    residual = _as_vector(residual).copy()
    gamma = config.detection_threshold if gamma is None else gamma
    max_paths = config.max_paths_per_order if max_paths is None else max_paths
    cache = {} if atom_cache is None else atom_cache
    trace = [] if trace is None else trace

    detections: list[DetectedPath] = []
    if len(atoms) == 0:
        return detections, residual

    res_energy = float(np.vdot(residual, residual).real)
    # detection / cancellation; re-picking an already-detected atom merges
    # into the existing path instead of duplicating it
    by_index = {}
    while len(detections) < max_paths and res_energy > noise_floor:
        idx, amp, energy = match_atom(residual, atoms)
        if energy < gamma * res_energy or energy <= min_gain_ratio * res_energy:
            break
        psi = _atom_vector(atoms, idx, cache)
        residual -= amp * psi
        new_energy = float(np.vdot(residual, residual).real)
        # orthogonal projection identity
        assert abs(new_energy - (res_energy - energy)) <= 1e-8 * max(res_energy, 1e-300)
        res_energy = new_energy
        if idx in by_index:
            by_index[idx].amplitude += amp
        else:
            ids, pos, k = _atom_meta(atoms, idx)
            det = DetectedPath(
                bounce_order=k,
                vertex_ids=ids,
                positions=pos,
                amplitude=amp,
                velocity=0.0,
                energy=energy,
                atom_index=idx,
            )
            detections.append(det)
            by_index[idx] = det
        trace.append(np.sqrt(res_energy))

    if not detections:
        return detections, residual

    # refinement: re-estimate each path with its contribution added back
    for _ in range(max(0, config.refine_cycles)):
        for det in detections:
            psi_old = _atom_vector(atoms, det.atom_index, cache, det.velocity)
            residual += det.amplitude * psi_old
            idx, amp, energy = match_atom(residual, atoms)
            psi = _atom_vector(atoms, idx, cache)
            velocity = 0.0
            if config.doppler_grid is not None and isinstance(atoms, AtomStream):
                for v in config.doppler_grid:
                    psi_v = _atom_vector(atoms, idx, cache, velocity=float(v))
                    amp_v = complex(np.vdot(psi_v, residual))
                    if abs(amp_v) ** 2 > energy:
                        amp, energy, velocity, psi = amp_v, abs(amp_v) ** 2, float(v), psi_v
            residual -= amp * psi
            ids, pos, k = _atom_meta(atoms, idx)
            det.bounce_order = k
            det.vertex_ids = ids
            det.positions = pos
            det.amplitude = amp
            det.velocity = velocity
            det.energy = energy
            det.atom_index = idx
            trace.append(float(np.linalg.norm(residual)))
    detections = _merge_duplicates(detections)

    # joint least-squares amplitude re-estimation over the detected set
    basis = np.column_stack(
        [_atom_vector(atoms, d.atom_index, cache, d.velocity) for d in detections]
    )
    target = residual + basis @ np.array([d.amplitude for d in detections])
    coef, *_ = np.linalg.lstsq(basis, target, rcond=None)
    residual = target - basis @ coef
    for det, c in zip(detections, coef):
        det.amplitude = complex(c)
    trace.append(float(np.linalg.norm(residual)))
    return detections, residual


def _merge_duplicates(detections):
    """Collapse detections sharing (atom_index, velocity) by summing amplitudes."""
    merged = {}
    out = []
    for det in detections:
        key = (det.atom_index, det.velocity)
        if key in merged:
            merged[key].amplitude += det.amplitude
        else:
            merged[key] = det
            out.append(det)
    return out


def _reconstruct(detections, atoms, cache, length) -> np.ndarray:
    out = np.zeros(length, dtype=complex)
    for det in detections:
        out += det.amplitude * _atom_vector(atoms, det.atom_index, cache, det.velocity)
    return out


def _joint_ls_and_prune(z, theta1, theta2, dict1, dict2, cache1, cache2, prune_rel):
    """Re-fit all detected amplitudes against z jointly; drop dead ones."""
    dets = [(d, dict1, cache1) for d in theta1] + [(d, dict2, cache2) for d in theta2]
    if not dets:
        return theta1, theta2
    basis = np.column_stack(
        [_atom_vector(atoms, d.atom_index, cache, d.velocity) for d, atoms, cache in dets]
    )
    coef, *_ = np.linalg.lstsq(basis, z, rcond=None)
    for (det, _, _), c in zip(dets, coef):
        det.amplitude = complex(c)
    energies = np.abs(coef) ** 2
    keep = energies >= prune_rel * energies.max()
    n1 = len(theta1)
    theta1 = [d for d, k in zip(theta1, keep[:n1]) if k]
    theta2 = [d for d, k in zip(theta2, keep[n1:]) if k]
    return theta1, theta2


def gm_sage(
    tensor,
    dict1: AtomStream,
    dict2: Optional[AtomStream],
    config: EstimatorConfig,
) -> EstimateReport:
    """Graph-dictionary multi-bounce estimator.

    Alternates one- and two-bounce passes, assigning whatever neither
    dictionary explains to the higher-bounce residual channel. See the module
    docstring for the iteration layout.
    """
    z = _as_vector(tensor)
    if isinstance(dict1, AtomStream) and dict1.signature_length != z.size:
        raise DimensionMismatchError(
            f"one-bounce dictionary expects length {dict1.signature_length}, "
            f"tensor has {z.size}"
        )
    if (
        dict2 is not None
        and isinstance(dict2, AtomStream)
        and dict2.signature_length != z.size
    ):
        raise DimensionMismatchError(
            f"two-bounce dictionary expects length {dict2.signature_length}, "
            f"tensor has {z.size}"
        )
    z_norm = float(np.linalg.norm(z))
    use_dict2 = dict2 is not None and config.max_bounce >= 2

    if z_norm == 0.0:
        return EstimateReport(
            detected=[],
            residual_trace=[0.0],
            residual_channel=z.copy(),
            iterations=0,
        )

    floor = (config.residual_floor_rel * z_norm) ** 2
    cache1: dict = {}
    cache2: dict = {}
    theta1: list = []
    theta2: list = []
    h2 = np.zeros_like(z)
    h2_norm = 0.0
    trace = [z_norm]
    step_norms: list = []
    iterations = 0

    for _ in range(config.outer_iters):
        iterations += 1
        theta1_prev, theta2_prev = theta1, theta2

        z1 = z - _reconstruct(theta2, dict2, cache2, z.size) - h2 if use_dict2 else z - h2
        if float(np.vdot(z1, z1).real) > floor:
            theta1, _ = sage_pass(
                z1, dict1, config, noise_floor=floor, atom_cache=cache1, trace=step_norms
            )

        if use_dict2:
            z2 = z - _reconstruct(theta1, dict1, cache1, z.size) - h2
            if float(np.vdot(z2, z2).real) > floor:
                theta2, _ = sage_pass(
                    z2, dict2, config, noise_floor=floor, atom_cache=cache2, trace=step_norms
                )

        # joint least squares across both orders removes the cross-coupling
        # bias of the pass-local amplitudes, then numerically-dead detections
        # are pruned
        theta1, theta2 = _joint_ls_and_prune(
            z, theta1, theta2, dict1, dict2, cache1, cache2, config.prune_rel
        )

        h2_new = z - _reconstruct(theta1, dict1, cache1, z.size)
        if use_dict2:
            h2_new = h2_new - _reconstruct(theta2, dict2, cache2, z.size)
        h2_new_norm = float(np.linalg.norm(h2_new))
        if iterations > 1 and h2_new_norm > h2_norm * (1.0 + 1e-12):
            # monotone safeguard: keep the previous state and stop
            theta1, theta2 = theta1_prev, theta2_prev
            iterations -= 1
            break
        rel_change = abs(h2_new_norm - h2_norm) / max(h2_new_norm, h2_norm, 1e-300)
        h2 = h2_new
        h2_norm = h2_new_norm
        trace.append(h2_norm)
        if h2_norm <= config.residual_floor_rel * z_norm:
            break
        if rel_change < config.convergence_eps:
            break

    return EstimateReport(
        detected=list(theta1) + list(theta2),
        residual_trace=trace,
        residual_channel=h2,
        iterations=iterations,
        extras={"step_norms": step_norms},
    )


def one_bounce_baseline(
    tensor,
    dict1: AtomStream,
    config: EstimatorConfig,
    residual_energy_target: Optional[float] = None,
) -> EstimateReport:
    """Benchmark that models the whole channel with one-bounce paths only.

    Detection continues past the usual threshold (any best match is
    accepted) until the residual energy reaches ``residual_energy_target`` --
    typically gm_sage's final residual energy for a comparable fit -- or the
    raised path cap is hit. Multi-bounce energy is therefore explained by
    spurious one-bounce detections: ghosts.
    """
    z = _as_vector(tensor)
    if isinstance(dict1, AtomStream) and dict1.signature_length != z.size:
        raise DimensionMismatchError(
            f"one-bounce dictionary expects length {dict1.signature_length}, "
            f"tensor has {z.size}"
        )
    z_norm = float(np.linalg.norm(z))
    if z_norm == 0.0:
        return EstimateReport(
            detected=[],
            residual_trace=[0.0],
            residual_channel=z.copy(),
            iterations=0,
            baseline=True,
        )
    if residual_energy_target is None:
        residual_energy_target = (config.residual_floor_rel * z_norm) ** 2
    step_norms: list = []
    detections, residual = sage_pass(
        z,
        dict1,
        config,
        noise_floor=residual_energy_target,
        gamma=0.0,
        max_paths=config.baseline_max_paths,
        min_gain_ratio=config.baseline_stop_ratio,
        trace=step_norms,
    )
    return EstimateReport(
        detected=detections,
        residual_trace=[z_norm] + [float(np.linalg.norm(residual))],
        residual_channel=residual,
        iterations=1,
        baseline=True,
        extras={"step_norms": step_norms, "residual_energy_target": residual_energy_target},
    )


def detection_points(report: EstimateReport):
    """Flatten a report into individual claimed scatterer locations."""
    points = []
    for path_id, det in enumerate(report.detected):
        for slot, pos in enumerate(det.positions):
            points.append(
                {
                    "path_id": path_id,
                    "bounce": det.bounce_order,
                    "slot": slot,
                    "position": np.asarray(pos, dtype=float),
                }
            )
    return points


def evaluate(report: EstimateReport, truth, match_radius: float) -> dict:
    """Greedy nearest matching of claimed scatterer points to true ones.

    ``truth`` is a sequence of scene Scatterer objects (or bare positions).
    Detections left unmatched within ``match_radius`` count as ghosts.
    """
    if not match_radius > 0.0:
        raise ValueError("match_radius must be > 0")
    truth_pos = [
        np.asarray(getattr(t, "position", t), dtype=float) for t in truth
    ]
    points = detection_points(report)

    pairs = []
    for di, det in enumerate(points):
        for ti, tp in enumerate(truth_pos):
            dist = float(np.linalg.norm(det["position"] - tp))
            if dist <= match_radius:
                pairs.append((dist, di, ti))
    pairs.sort(key=lambda x: (x[0], x[1], x[2]))

    det_used = set()
    truth_used = set()
    matches = []
    for dist, di, ti in pairs:
        if di in det_used or ti in truth_used:
            continue
        det_used.add(di)
        truth_used.add(ti)
        matches.append((di, ti, dist))

    rmse = (
        float(np.sqrt(np.mean([d**2 for _, _, d in matches]))) if matches else 0.0
    )
    entries = []
    for di, det in enumerate(points):
        match = next(((ti, d) for mdi, ti, d in matches if mdi == di), None)
        entries.append(
            {
                "path_id": det["path_id"],
                "bounce": det["bounce"],
                "slot": det["slot"],
                "x_m": det["position"][0],
                "y_m": det["position"][1],
                "z_m": det["position"][2],
                "matched": match is not None,
                "truth_index": match[0] if match else None,
                "distance_m": match[1] if match else None,
            }
        )
    return {
        "true_positives": len(matches),
        "ghosts": len(points) - len(matches),
        "rmse_m": rmse,
        "n_truth": len(truth_pos),
        "n_detection_points": len(points),
        "match_radius_m": match_radius,
        "points": entries,
    }


# ---------------------------------------------------------------------------
# estimates CSV (the estimator's file interface)

CSV_HEADER = (
    "path_id,bounce,x_m,y_m,z_m,x2_m,y2_m,z2_m,amp_re,amp_im,velocity_mps,energy"
)


def estimates_to_csv(report: EstimateReport) -> str:
    lines = [CSV_HEADER]
    for path_id, det in enumerate(report.detected):
        first = det.positions[0]
        second = det.positions[1] if det.bounce_order >= 2 else None
        cells = [
            str(path_id),
            str(det.bounce_order),
            repr(float(first[0])),
            repr(float(first[1])),
            repr(float(first[2])),
            repr(float(second[0])) if second is not None else "",
            repr(float(second[1])) if second is not None else "",
            repr(float(second[2])) if second is not None else "",
            repr(float(det.amplitude.real)),
            repr(float(det.amplitude.imag)),
            repr(float(det.velocity)),
            repr(float(det.energy)),
        ]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def estimates_from_csv(text: str):
    """Parse an estimates CSV back into DetectedPath records."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("estimates CSV must start with the canonical header row")
    out = []
    for row_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != 12:
            raise ValueError(f"estimates CSV row {row_no}: expected 12 columns")
        bounce = int(cells[1])
        pos = [[float(cells[2]), float(cells[3]), float(cells[4])]]
        if bounce >= 2:
            pos.append([float(cells[5]), float(cells[6]), float(cells[7])])
        out.append(
            DetectedPath(
                bounce_order=bounce,
                vertex_ids=(-1,) * bounce,
                positions=np.asarray(pos),
                amplitude=complex(float(cells[8]), float(cells[9])),
                velocity=float(cells[10]),
                energy=float(cells[11]),
                atom_index=-1,
            )
        )
    return out
