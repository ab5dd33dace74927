"""Parametric indoor scenes and ground-truth multi-bounce path generation.

Walls are parallelogram patches (corner + two edge vectors) with a complex
reflection coefficient; point scatterers carry a complex reflectivity and a
radial velocity. Specular wall paths come from the image method; point
scatterer chains are enumerated combinatorially. Wall-specular and
point-scatterer interactions are never mixed within one path.
"""

from __future__ import annotations

import cmath
import json
from dataclasses import dataclass, field

import numpy as np

from .channel import PathCoefficients
from .constants import C
from .geometry import (
    ArraySpec,
    Box,
    COINCIDENCE_TOL,
    Pose,
    as_vec3,
    element_positions,
    path_geometry,
    reference_position,
)


class SceneFormatError(ValueError):
    """Raised when a scene file cannot be parsed."""


@dataclass(frozen=True)
class Wall:
    """Planar parallelogram patch in 3D with a complex reflection coefficient."""

    corner: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray
    reflection: complex = 1.0 + 0.0j

    def __post_init__(self):
        object.__setattr__(self, "corner", as_vec3(self.corner, "wall corner"))
        object.__setattr__(self, "edge_u", as_vec3(self.edge_u, "wall edge_u"))
        object.__setattr__(self, "edge_v", as_vec3(self.edge_v, "wall edge_v"))
        object.__setattr__(self, "reflection", complex(self.reflection))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) < 1e-12:
            raise ValueError("wall edge vectors must be linearly independent")
        if abs(self.reflection) > 1.0 + 1e-12:
            raise ValueError("|reflection coefficient| must be <= 1")

    @property
    def normal(self):
        n = np.cross(self.edge_u, self.edge_v)
        return n / np.linalg.norm(n)

    def plane_coordinates(self, point):
        """(s, t) such that point ~ corner + s*edge_u + t*edge_v (in-plane part)."""
        rel = as_vec3(point, "point") - self.corner
        gram = np.array(
            [
                [self.edge_u @ self.edge_u, self.edge_u @ self.edge_v],
                [self.edge_v @ self.edge_u, self.edge_v @ self.edge_v],
            ]
        )
        rhs = np.array([rel @ self.edge_u, rel @ self.edge_v])
        s, t = np.linalg.solve(gram, rhs)
        return float(s), float(t)

    def contains_point(self, point, tol=1e-9):
        """True if the in-plane projection of ``point`` lies on the patch."""
        s, t = self.plane_coordinates(point)
        return -tol <= s <= 1.0 + tol and -tol <= t <= 1.0 + tol


def mirror_image(point, wall: Wall) -> np.ndarray:
    """Reflection of ``point`` across the wall's plane."""
    point = as_vec3(point, "point")
    n = wall.normal
    return point - 2.0 * float((point - wall.corner) @ n) * n


@dataclass(frozen=True)
class Scatterer:
    """Point scatterer: position, complex reflectivity, radial velocity."""

    position: np.ndarray
    reflectivity: complex
    velocity: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", as_vec3(self.position, "scatterer position"))
        object.__setattr__(self, "reflectivity", complex(self.reflectivity))
        if abs(self.reflectivity) <= 0.0:
            raise ValueError("active scatterer needs |reflectivity| > 0")


@dataclass
class SceneConfig:
    """Scene: walls, point scatterers, the two arrays, and bounding box."""

    walls: list
    scatterers: list
    tx_array: ArraySpec
    rx_array: ArraySpec
    bounds: Box

    def __post_init__(self):
        for name, array in (("tx_array", self.tx_array), ("rx_array", self.rx_array)):
            if not bool(np.all(self.bounds.contains(element_positions(array)))):
                raise ValueError(f"{name} elements fall outside the scene bounds")


@dataclass(frozen=True)
class GroundTruthPath:
    """A generated path with its coefficients and bounce order."""

    geometry: object  # PathGeometry
    coefficients: PathCoefficients
    bounce_order: int

    def __post_init__(self):
        if self.bounce_order != len(self.geometry.hops):
            raise ValueError("bounce_order must equal the number of hops")


def _segment_blocked(p0, p1, walls, allowed):
    """True if segment p0->p1 crosses any wall patch.

    ``allowed`` maps wall index -> list of points where this segment is
    permitted to touch that wall (its own reflection endpoints).
    """
    d = p1 - p0
    for w_idx, wall in enumerate(walls):
        n = wall.normal
        denom = float(d @ n)
        if abs(denom) < 1e-15:
            continue  # parallel to the plane
        t = float((wall.corner - p0) @ n) / denom
        if not 1e-9 < t < 1.0 - 1e-9:
            continue
        hit = p0 + t * d
        if not wall.contains_point(hit, tol=1e-9):
            continue
        ok = any(
            np.linalg.norm(hit - pt) <= 1e-6 for pt in allowed.get(w_idx, ())
        )
        if not ok:
            return True
    return False


def _wall_sequences(n_walls, max_bounce):
    """Ordered wall-index sequences of length 1..max_bounce, no immediate repeats."""
    seqs = [[i] for i in range(n_walls)]
    out = list(seqs)
    for _ in range(max_bounce - 1):
        seqs = [s + [j] for s in seqs for j in range(n_walls) if j != s[-1]]
        out.extend(seqs)
    return out


def image_method_paths(scene: SceneConfig, max_bounce: int):
    """Specular wall paths via successive images of the reference Tx.

    A candidate sequence survives only if every reflection point lies on its
    wall patch and every segment is unblocked by the other walls. Path gain
    is (prod |reflection|) * (1 m / total length); phase is the sum of
    reflection-coefficient phases.
    """
    if max_bounce not in (1, 2, 3):
        raise ValueError("max_bounce must be in {1, 2, 3}")
    tx_ref = reference_position(scene.tx_array)
    rx_ref = reference_position(scene.rx_array)
    out = []
    for seq in _wall_sequences(len(scene.walls), max_bounce):
        # forward image chain of the Tx reference
        images = [tx_ref]
        for w in seq:
            images.append(mirror_image(images[-1], scene.walls[w]))
        # backtrace from Rx through the walls in reverse order
        points = [rx_ref]
        valid = True
        target = points[0]
        for k in range(len(seq) - 1, -1, -1):
            wall = scene.walls[seq[k]]
            n = wall.normal
            d = images[k + 1] - target
            denom = float(d @ n)
            if abs(denom) < 1e-15:
                valid = False
                break
            t = float((wall.corner - target) @ n) / denom
            if not 1e-9 < t < 1.0 - 1e-9:
                valid = False
                break
            hit = target + t * d
            if not wall.contains_point(hit):
                valid = False
                break
            points.append(hit)
            target = hit
        if not valid:
            continue
        hops = points[1:][::-1]  # reflection points in propagation order
        polyline = [tx_ref] + hops + [rx_ref]
        if any(
            np.linalg.norm(polyline[i + 1] - polyline[i]) < COINCIDENCE_TOL
            for i in range(len(polyline) - 1)
        ):
            continue
        # occlusion: each segment may touch only its own reflection walls
        blocked = False
        for i in range(len(polyline) - 1):
            allowed = {}
            if i > 0:
                allowed.setdefault(seq[i - 1], []).append(polyline[i])
            if i < len(seq):
                allowed.setdefault(seq[i], []).append(polyline[i + 1])
            if _segment_blocked(polyline[i], polyline[i + 1], scene.walls, allowed):
                blocked = True
                break
        if blocked:
            continue
        geometry = path_geometry(tx_ref, rx_ref, hops)
        total_len = geometry.tau_ref * C
        mags = [abs(scene.walls[w].reflection) for w in seq]
        phases = [cmath.phase(scene.walls[w].reflection) for w in seq]
        coeff = PathCoefficients(
            alpha=float(np.prod(mags)) / total_len,
            phi=float(sum(phases)),
            velocity=0.0,
        )
        out.append(GroundTruthPath(geometry, coeff, len(seq)))
    return out


def scatterer_chain_paths(scene: SceneConfig, max_bounce: int):
    """All ordered chains of distinct point scatterers up to max_bounce hops.

    Gain is (prod |reflectivity|) * (1 m / total length), phase the sum of
    reflectivity phases, velocity the sum of chain-member velocities.
    """
    if max_bounce not in (1, 2, 3):
        raise ValueError("max_bounce must be in {1, 2, 3}")
    positions = [s.position for s in scene.scatterers]
    for i in range(len(positions)):
        for j in range(i + 1, len(positions)):
            if np.linalg.norm(positions[i] - positions[j]) < COINCIDENCE_TOL:
                raise ValueError("scatterers must be pairwise distinct")
    tx_ref = reference_position(scene.tx_array)
    rx_ref = reference_position(scene.rx_array)

    chains = [[i] for i in range(len(positions))]
    all_chains = list(chains)
    for _ in range(max_bounce - 1):
        chains = [c + [j] for c in chains for j in range(len(positions)) if j not in c]
        all_chains.extend(chains)

    out = []
    for chain in all_chains:
        hops = [positions[i] for i in chain]
        geometry = path_geometry(tx_ref, rx_ref, hops)
        total_len = geometry.tau_ref * C
        members = [scene.scatterers[i] for i in chain]
        coeff = PathCoefficients(
            alpha=float(np.prod([abs(s.reflectivity) for s in members])) / total_len,
            phi=float(sum(cmath.phase(s.reflectivity) for s in members)),
            velocity=float(sum(s.velocity for s in members)),
        )
        out.append(GroundTruthPath(geometry, coeff, len(chain)))
    return out


# ---------------------------------------------------------------------------
# serialization


def _complex_to_json(z: complex):
    return {"re": z.real, "im": z.imag}


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise SceneFormatError(f"missing required field '{key}' in {context}")
    return obj[key]


def _complex_from_json(obj, context):
    if not isinstance(obj, dict):
        raise SceneFormatError(f"expected {{re, im}} object in {context}")
    return complex(_require(obj, "re", context), _require(obj, "im", context))


def _pose_to_json(pose: Pose):
    return {"origin": list(pose.origin), "basis": [list(b) for b in pose.basis]}


def _pose_from_json(obj, context):
    return Pose(
        origin=np.asarray(_require(obj, "origin", context), dtype=float),
        basis=np.asarray(_require(obj, "basis", context), dtype=float),
    )


def _array_to_json(array: ArraySpec):
    return {
        "rows": array.rows,
        "cols": array.cols,
        "spacing": array.spacing,
        "reference_index": array.reference_index,
        "pose": _pose_to_json(array.pose),
    }


def _array_from_json(obj, context):
    return ArraySpec(
        rows=int(_require(obj, "rows", context)),
        cols=int(_require(obj, "cols", context)),
        spacing=float(_require(obj, "spacing", context)),
        reference_index=int(_require(obj, "reference_index", context)),
        pose=_pose_from_json(_require(obj, "pose", context), f"{context}.pose"),
    )


def scene_to_dict(scene: SceneConfig) -> dict:
    return {
        "walls": [
            {
                "corner": list(w.corner),
                "edge_u": list(w.edge_u),
                "edge_v": list(w.edge_v),
                "reflection": _complex_to_json(w.reflection),
            }
            for w in scene.walls
        ],
        "scatterers": [
            {
                "position": list(s.position),
                "reflectivity": _complex_to_json(s.reflectivity),
                "velocity": s.velocity,
            }
            for s in scene.scatterers
        ],
        "tx_array": _array_to_json(scene.tx_array),
        "rx_array": _array_to_json(scene.rx_array),
        "bounds": {"min": list(scene.bounds.lo), "max": list(scene.bounds.hi)},
    }


def scene_from_dict(obj: dict) -> SceneConfig:
    walls = [
        Wall(
            corner=np.asarray(_require(w, "corner", f"walls[{i}]"), dtype=float),
            edge_u=np.asarray(_require(w, "edge_u", f"walls[{i}]"), dtype=float),
            edge_v=np.asarray(_require(w, "edge_v", f"walls[{i}]"), dtype=float),
            reflection=_complex_from_json(
                _require(w, "reflection", f"walls[{i}]"), f"walls[{i}].reflection"
            ),
        )
        for i, w in enumerate(_require(obj, "walls", "scene"))
    ]
    scatterers = [
        Scatterer(
            position=np.asarray(_require(s, "position", f"scatterers[{i}]"), dtype=float),
            reflectivity=_complex_from_json(
                _require(s, "reflectivity", f"scatterers[{i}]"),
                f"scatterers[{i}].reflectivity",
            ),
            velocity=float(s.get("velocity", 0.0)),
        )
        for i, s in enumerate(_require(obj, "scatterers", "scene"))
    ]
    bounds_obj = _require(obj, "bounds", "scene")
    return SceneConfig(
        walls=walls,
        scatterers=scatterers,
        tx_array=_array_from_json(_require(obj, "tx_array", "scene"), "tx_array"),
        rx_array=_array_from_json(_require(obj, "rx_array", "scene"), "rx_array"),
        bounds=Box(
            lo=np.asarray(_require(bounds_obj, "min", "bounds"), dtype=float),
            hi=np.asarray(_require(bounds_obj, "max", "bounds"), dtype=float),
        ),
    )


def save_scene(path, scene: SceneConfig):
    from .tensorio import atomic_write_text

    atomic_write_text(path, json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path) -> SceneConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneFormatError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    return scene_from_dict(obj)


def demo_scene() -> SceneConfig:
    """A small office-like scene: 4 walls, 3 point scatterers, 7x7 arrays.

    Deterministic by construction, used by the CLI scene-demo command.
    """
    room_w, room_d, room_h = 4.0, 3.0, 2.5
    rc = 0.7 + 0.0j
    walls = [
        Wall(corner=(0.0, 0.0, 0.0), edge_u=(room_w, 0.0, 0.0), edge_v=(0.0, 0.0, room_h), reflection=rc),
        Wall(corner=(0.0, room_d, 0.0), edge_u=(room_w, 0.0, 0.0), edge_v=(0.0, 0.0, room_h), reflection=rc),
        Wall(corner=(0.0, 0.0, 0.0), edge_u=(0.0, room_d, 0.0), edge_v=(0.0, 0.0, room_h), reflection=rc),
        Wall(corner=(room_w, 0.0, 0.0), edge_u=(0.0, room_d, 0.0), edge_v=(0.0, 0.0, room_h), reflection=rc),
    ]
    # positions sit on a 0.2 m lattice and are spread in total path delay so
    # the bundled estimation configs resolve them cleanly
    scatterers = [
        Scatterer(position=(1.2, 2.0, 1.0), reflectivity=0.9 + 0.2j),
        Scatterer(position=(2.6, 0.8, 1.2), reflectivity=0.8 - 0.3j),
        Scatterer(position=(1.2, 0.6, 1.6), reflectivity=0.6 + 0.6j),
    ]
    f_c = 30e9
    spacing = 299792458.0 / f_c / 2.0
    tx = ArraySpec(
        rows=7, cols=7, spacing=spacing, pose=Pose.facing((0.4, 1.5, 1.0), (2.0, 1.5, 1.0))
    )
    rx = ArraySpec(
        rows=7, cols=7, spacing=spacing, pose=Pose.facing((3.6, 1.6, 1.0), (2.0, 1.5, 1.0))
    )
    return SceneConfig(
        walls=walls,
        scatterers=scatterers,
        tx_array=tx,
        rx_array=rx,
        bounds=Box(lo=(0.0, 0.0, 0.0), hi=(room_w, room_d, room_h)),
    )
