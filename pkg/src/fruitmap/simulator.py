"""Synthetic branch-scan oracle: scene generation, trajectory, depth rendering.

Scene frame conventions (shared with the exported dataset):

- x runs along the branch, from 0 to branch_length; y points down (fruitlets
  hang at y > 0); the canopy plane is z = 0.
- Side A's coordinate frame is the scene frame. Side B gets an independent
  frame (a half-turn about x plus a fixed offset), standing in for a second
  tracking origin; in both side frames +z points from that side's cameras
  into the canopy.
- Cameras on side A sit at z < 0 looking toward +z; side B poses are the
  mirror image through the canopy plane, with the handedness fixed by
  flipping the camera x axis.
- One fiducial sits near the branch base, below the branch origin. Its pose
  is exported per side, which is all the alignment stage needs.

Rendering is an exact ray cast against spheres (fruitlets) and thin opaque
rectangles (leaf stand-ins): nearest hit wins, fruitlet hits label the mask
with ground-truth id + 1 (0 is background), occluder hits leave depth but no
label, misses store NaN. Gaussian depth noise is added per frame from an
explicit seed. Depth math runs in float64; datasets store float32, so a
quantization of order 1e-8 m appears only at export.

Mask labels come from geometry, standing in for a perfect detector. The
optional mask dilation grows each label into unclaimed valid-depth pixels to
emulate sloppy segmentation boundaries that drag background depth into a
fruitlet's cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import ndimage

from .dataset import (
    DEFAULT_MIN_POINTS,
    FiducialObservation,
    FrameRecord,
    GroundTruth,
    GroundTruthFruitlet,
    ScanDataset,
    write_dataset,
)
from .geometry import CameraIntrinsics, RigidTransform, rotation_about_axis
from .spherefit import FitConfig

__all__ = [
    "DEFAULT_INTRINSICS",
    "SceneGenerationError",
    "OrchardSpec",
    "LeafOccluder",
    "Scene",
    "generate_scene",
    "plan_trajectory",
    "render_frame",
    "simulate_dataset",
    "export_dataset",
]

DEFAULT_INTRINSICS = CameraIntrinsics(
    fx=362.0, fy=362.0, cx=308.0, cy=257.0, width=616, height=514
)

SIDES = ("A", "B")

ARC_COUNT = 4
POSES_PER_ARC = 10
ARC_SPACING = 0.015          # m along the branch axis
STANDOFF_RANGE = (0.31, 0.39)  # arc radii, inside the 0.30-0.40 m band
SWEEP_HALF_ANGLE = np.pi / 4
AIM_DROP = 0.03              # aim point hangs this far below the branch line
NEAR_PLANE = 0.05

_PLACEMENT_HALF_WINDOW = 0.20  # cluster anchors stay this close to branch center
_PLACEMENT_RETRIES = 200
_CLUSTER_RETRIES = 50
_NOISE_STREAM_TAG = 7741  # keeps frame-noise seeds apart from fit-seed streams

_SIDE_B_FROM_SCENE = RigidTransform(
    rotation_about_axis([1.0, 0.0, 0.0], np.pi), (0.02, -0.03, 0.05)
)
_FIDUCIAL_TO_SCENE = RigidTransform(np.eye(3), (0.0, 0.09, 0.0))


class SceneGenerationError(ValueError):
    """Raised when a spec cannot be placed without overlaps within the retry budget."""


@dataclass(frozen=True)
class OrchardSpec:
    """Parameters of one synthetic branch scene."""

    branch_length: float = 0.9
    cluster_count: int = 8
    fruitlets_per_cluster: tuple[int, int] = (1, 3)
    diameter_range: tuple[float, float] = (0.008, 0.025)
    cluster_spread: float = 0.035
    occluder_count: int = 6
    occluder_size: float = 0.06
    depth_noise_sigma: float = 0.0011
    rng_seed: int = 0
    min_separation: float = 0.024
    mask_dilate_px: int = 0

    def __post_init__(self) -> None:
        if self.branch_length <= 0:
            raise ValueError("branch_length must be positive")
        if self.cluster_count < 1:
            raise ValueError("cluster_count must be at least 1")
        lo, hi = self.fruitlets_per_cluster
        if not (1 <= lo <= hi):
            raise ValueError(f"bad fruitlets_per_cluster range ({lo}, {hi})")
        d_lo, d_hi = self.diameter_range
        band = FitConfig()
        if not (band.d_min <= d_lo <= d_hi <= band.d_max):
            raise ValueError(
                f"diameter_range [{d_lo}, {d_hi}] outside the plausible "
                f"fit band [{band.d_min}, {band.d_max}]"
            )
        if self.cluster_spread < 0:
            raise ValueError("cluster_spread must be non-negative")
        if self.occluder_count < 0:
            raise ValueError("occluder_count must be non-negative")
        if self.occluder_size <= 0:
            raise ValueError("occluder_size must be positive")
        if self.depth_noise_sigma < 0:
            raise ValueError("depth_noise_sigma must be non-negative")
        if self.min_separation <= 0:
            raise ValueError("min_separation must be positive")
        if self.mask_dilate_px < 0:
            raise ValueError("mask_dilate_px must be non-negative")


@dataclass(frozen=True)
class LeafOccluder:
    """Thin opaque rectangle: center plus two orthonormal in-plane axes."""

    center: tuple[float, float, float]
    axis_u: tuple[float, float, float]
    axis_v: tuple[float, float, float]
    half_u: float
    half_v: float


@dataclass(frozen=True)
class Scene:
    """Placed geometry plus the rig facts needed to render and export it."""

    fruitlets: tuple[GroundTruthFruitlet, ...]
    occluders: tuple[LeafOccluder, ...]
    branch_length: float
    side_from_scene: Mapping[str, RigidTransform]
    fiducial_to_scene: RigidTransform
    depth_noise_sigma: float
    mask_dilate_px: int
    rng_seed: int
    dataset_id: str


def _spec_dataset_id(spec: OrchardSpec) -> str:
    import hashlib
    import json
    from dataclasses import asdict

    payload = json.dumps(asdict(spec), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _draw_occluder(child_seed: np.random.SeedSequence, spec: OrchardSpec) -> LeafOccluder:
    rng = np.random.default_rng(child_seed)
    mid = spec.branch_length / 2.0
    side_sign = 1.0 if rng.random() < 0.5 else -1.0
    center = (
        mid + rng.uniform(-0.24, 0.24),
        rng.uniform(-0.02, 0.08),
        side_sign * rng.uniform(0.045, 0.085),
    )
    # leaves lie roughly in the canopy plane: normal near +/-z with a tilt
    normal = np.array([rng.normal(0, 0.25), rng.normal(0, 0.25), 1.0])
    normal /= np.linalg.norm(normal)
    axis_u = np.cross([0.0, 1.0, 0.0], normal)
    axis_u /= np.linalg.norm(axis_u)
    axis_v = np.cross(normal, axis_u)
    half = spec.occluder_size / 2.0
    return LeafOccluder(
        center=center,
        axis_u=tuple(axis_u),
        axis_v=tuple(axis_v),
        half_u=half,
        half_v=half,
    )


def generate_scene(spec: OrchardSpec) -> tuple[Scene, GroundTruth]:
    """Place clustered fruitlets and leaf occluders, deterministically per seed.

    Fruitlet centers keep a pairwise separation of at least
    max(spec.min_separation, sum of the two radii), retried per fruitlet up
    to a fixed budget; exhausting it raises SceneGenerationError. Occluder i
    is drawn from the i-th spawned child of the occluder seed stream, so
    extending occluder_count leaves existing occluders in place.

    The returned GroundTruth carries empty per-side visibility counts; they
    require rendering and are filled by simulate_dataset / export_dataset.
    """
    ss = np.random.SeedSequence(spec.rng_seed)
    fruit_ss, occluder_ss = ss.spawn(2)
    rng = np.random.default_rng(fruit_ss)

    mid = spec.branch_length / 2.0
    lo, hi = spec.fruitlets_per_cluster
    half_spread = spec.cluster_spread / 2.0
    placed: list[tuple[np.ndarray, float]] = []

    def try_cluster() -> list[tuple[np.ndarray, float]] | None:
        anchor = np.array(
            [
                mid + rng.uniform(-_PLACEMENT_HALF_WINDOW, _PLACEMENT_HALF_WINDOW),
                rng.uniform(0.015, 0.055),
                rng.uniform(-0.008, 0.008),
            ]
        )
        members: list[tuple[np.ndarray, float]] = []
        for _ in range(int(rng.integers(lo, hi + 1))):
            for _ in range(_PLACEMENT_RETRIES):
                center = anchor + rng.uniform(-half_spread, half_spread, size=3)
                diameter = rng.uniform(*spec.diameter_range)
                ok = all(
                    np.linalg.norm(center - other) >= max(
                        spec.min_separation, (diameter + other_d) / 2.0
                    )
                    for other, other_d in placed + members
                )
                if ok:
                    members.append((center, diameter))
                    break
            else:
                return None
        return members

    for _ in range(spec.cluster_count):
        for attempt in range(_CLUSTER_RETRIES + 1):
            if attempt == _CLUSTER_RETRIES:
                raise SceneGenerationError(
                    f"cluster placement failed after {_CLUSTER_RETRIES} anchor "
                    f"redraws of {_PLACEMENT_RETRIES} tries each; spec too dense"
                )
            members = try_cluster()
            if members is not None:
                placed.extend(members)
                break

    fruitlets = tuple(
        GroundTruthFruitlet(id=i, center=tuple(center), diameter=float(diameter))
        for i, (center, diameter) in enumerate(placed)
    )
    occluders = tuple(
        _draw_occluder(child, spec)
        for child in occluder_ss.spawn(spec.occluder_count)
    )
    scene = Scene(
        fruitlets=fruitlets,
        occluders=occluders,
        branch_length=spec.branch_length,
        side_from_scene={
            "A": RigidTransform.identity(),
            "B": _SIDE_B_FROM_SCENE,
        },
        fiducial_to_scene=_FIDUCIAL_TO_SCENE,
        depth_noise_sigma=spec.depth_noise_sigma,
        mask_dilate_px=spec.mask_dilate_px,
        rng_seed=spec.rng_seed,
        dataset_id=_spec_dataset_id(spec),
    )
    truth = GroundTruth(fruitlets=fruitlets, visibility={side: {} for side in SIDES})
    return scene, truth


def _look_at(position: np.ndarray, target: np.ndarray) -> RigidTransform:
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    # camera y tracks scene +y (down); forward always has a z component here
    right = np.cross([0.0, 1.0, 0.0], forward)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.column_stack([right, down, forward])
    return RigidTransform(rotation, position)


def _mirror_pose(pose: RigidTransform) -> RigidTransform:
    # reflect through z=0, then flip the camera x axis to restore handedness
    flip_z = np.diag([1.0, 1.0, -1.0])
    flip_x = np.diag([-1.0, 1.0, 1.0])
    return RigidTransform(flip_z @ pose.rotation @ flip_x, flip_z @ pose.translation)


def plan_trajectory(spec: OrchardSpec) -> dict[str, tuple[RigidTransform, ...]]:
    """Camera-to-scene poses per side: 4 transverse arcs of 10 poses each.

    Arc planes are perpendicular to the branch axis, centered on it, spaced
    15 mm apart around the branch midpoint; radii span the standoff band, so
    every position is 0.31-0.39 m from the axis. Each pose aims at a point
    just below the branch in its arc plane. Side B is the mirror image of
    side A through the canopy plane.
    """
    mid = spec.branch_length / 2.0
    radii = np.linspace(*STANDOFF_RANGE, ARC_COUNT)
    sweep = np.linspace(-SWEEP_HALF_ANGLE, SWEEP_HALF_ANGLE, POSES_PER_ARC)
    poses_a = []
    for arc, radius in enumerate(radii):
        x_arc = mid + (arc - (ARC_COUNT - 1) / 2.0) * ARC_SPACING
        target = np.array([x_arc, AIM_DROP, 0.0])
        for angle in sweep:
            position = np.array(
                [x_arc, radius * np.sin(angle), -radius * np.cos(angle)]
            )
            poses_a.append(_look_at(position, target))
    poses_b = [_mirror_pose(p) for p in poses_a]
    return {"A": tuple(poses_a), "B": tuple(poses_b)}


def _roi_from_points(
    cam_points: np.ndarray, intrinsics: CameraIntrinsics
) -> tuple[int, int, int, int] | None:
    """Clipped pixel bbox covering the projected convex hull, or full image.

    None means the object is entirely behind the near plane. Falls back to
    the full image when any corner is too close to project reliably.
    """
    if np.all(cam_points[:, 2] <= NEAR_PLANE):
        return None
    if np.any(cam_points[:, 2] <= NEAR_PLANE):
        return 0, intrinsics.width, 0, intrinsics.height
    u = intrinsics.fx * cam_points[:, 0] / cam_points[:, 2] + intrinsics.cx
    v = intrinsics.fy * cam_points[:, 1] / cam_points[:, 2] + intrinsics.cy
    u0 = max(int(np.floor(u.min())) - 1, 0)
    u1 = min(int(np.ceil(u.max())) + 2, intrinsics.width)
    v0 = max(int(np.floor(v.min())) - 1, 0)
    v1 = min(int(np.ceil(v.max())) + 2, intrinsics.height)
    if u0 >= u1 or v0 >= v1:
        return None
    return u0, u1, v0, v1


_AABB_CORNERS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
)


def _ray_dirs(
    intrinsics: CameraIntrinsics, box: tuple[int, int, int, int]
) -> np.ndarray:
    u0, u1, v0, v1 = box
    us = np.arange(u0, u1, dtype=float)
    vs = np.arange(v0, v1, dtype=float)
    grid_u, grid_v = np.meshgrid(us, vs)
    return np.stack(
        [
            (grid_u - intrinsics.cx) / intrinsics.fx,
            (grid_v - intrinsics.cy) / intrinsics.fy,
            np.ones_like(grid_u),
        ],
        axis=-1,
    )


def render_frame(
    scene: Scene,
    pose: RigidTransform,
    intrinsics: CameraIntrinsics | None = None,
    noise_sigma: float = 0.0,
    rng_seed: int = 0,
    dilate_px: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact ray cast of the scene from one camera-to-scene pose.

    Returns (depth, masks): float64 depth in meters with NaN where no surface
    was hit, and a uint16 label image where fruitlet pixels carry ground-truth
    id + 1 and occluder pixels stay 0. Gaussian noise of the given sigma is
    added to every valid depth, seeded by rng_seed alone.
    """
    intr = intrinsics if intrinsics is not None else DEFAULT_INTRINSICS
    to_camera = pose.inverse()
    depth = np.full((intr.height, intr.width), np.inf)
    masks = np.zeros((intr.height, intr.width), dtype=np.uint16)

    for fruit in scene.fruitlets:
        radius = fruit.diameter / 2.0
        center = to_camera.apply(np.asarray(fruit.center))
        corners = center + radius * _AABB_CORNERS
        box = _roi_from_points(corners, intr)
        if box is None:
            continue
        dirs = _ray_dirs(intr, box)
        dd = np.einsum("...k,...k->...", dirs, dirs)
        b = dirs @ center
        disc = b * b - dd * (center @ center - radius * radius)
        with np.errstate(invalid="ignore"):
            s = (b - np.sqrt(disc)) / dd
        hit = (disc >= 0) & (s > NEAR_PLANE)
        u0, u1, v0, v1 = box
        window_depth = depth[v0:v1, u0:u1]
        closer = hit & (s < window_depth)
        window_depth[closer] = s[closer]
        masks[v0:v1, u0:u1][closer] = fruit.id + 1

    for leaf in scene.occluders:
        center = to_camera.apply(np.asarray(leaf.center))
        axis_u = to_camera.rotation @ np.asarray(leaf.axis_u)
        axis_v = to_camera.rotation @ np.asarray(leaf.axis_v)
        corners = center + np.array(
            [
                su * leaf.half_u * axis_u + sv * leaf.half_v * axis_v
                for su in (-1, 1)
                for sv in (-1, 1)
            ]
        )
        box = _roi_from_points(corners, intr)
        if box is None:
            continue
        dirs = _ray_dirs(intr, box)
        normal = np.cross(axis_u, axis_v)
        denom = dirs @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (center @ normal) / denom
        points = s[..., None] * dirs - center
        hit = (
            (np.abs(denom) > 1e-12)
            & (s > NEAR_PLANE)
            & (np.abs(points @ axis_u) <= leaf.half_u)
            & (np.abs(points @ axis_v) <= leaf.half_v)
        )
        u0, u1, v0, v1 = box
        window_depth = depth[v0:v1, u0:u1]
        closer = hit & (s < window_depth)
        window_depth[closer] = s[closer]
        masks[v0:v1, u0:u1][closer] = 0

    valid = np.isfinite(depth)
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        depth[valid] += rng.normal(0.0, noise_sigma, size=int(valid.sum()))
    depth[~valid] = np.nan

    if dilate_px > 0:
        claimable = valid & (masks == 0)
        for instance_id in np.unique(masks[masks > 0]):
            grown = ndimage.binary_dilation(
                masks == instance_id, iterations=dilate_px
            )
            take = grown & claimable
            masks[take] = instance_id
            claimable &= ~take
    return depth, masks


def _frame_noise_seed(base_seed: int, side_index: int, frame_index: int) -> int:
    ss = np.random.SeedSequence(
        [int(base_seed), _NOISE_STREAM_TAG, int(side_index), int(frame_index)]
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _assemble_dataset(
    scene: Scene,
    trajectory: Mapping[str, tuple[RigidTransform, ...]],
    truth: GroundTruth,
    intrinsics: CameraIntrinsics | None,
) -> ScanDataset:
    intr = intrinsics if intrinsics is not None else DEFAULT_INTRINSICS
    frames: dict[str, tuple[FrameRecord, ...]] = {}
    fiducials: dict[str, FiducialObservation] = {}
    visibility: dict[str, dict[int, int]] = {}
    for side_index, side in enumerate(SIDES):
        side_from_scene = scene.side_from_scene[side]
        counts = {fruit.id: 0 for fruit in scene.fruitlets}
        records = []
        for frame_index, pose_scene in enumerate(trajectory[side]):
            depth, masks = render_frame(
                scene,
                pose_scene,
                intr,
                noise_sigma=scene.depth_noise_sigma,
                rng_seed=_frame_noise_seed(scene.rng_seed, side_index, frame_index),
                dilate_px=scene.mask_dilate_px,
            )
            labels, pixel_counts = np.unique(masks[masks > 0], return_counts=True)
            for label, pixels in zip(labels, pixel_counts):
                if pixels >= DEFAULT_MIN_POINTS:
                    counts[int(label) - 1] += 1
            records.append(
                FrameRecord(
                    frame_index=frame_index,
                    pose=side_from_scene.compose(pose_scene),
                    intrinsics=intr,
                    depth=depth.astype(np.float32),
                    masks=masks,
                )
            )
        frames[side] = tuple(records)
        fiducials[side] = FiducialObservation(
            side=side, pose=side_from_scene.compose(scene.fiducial_to_scene)
        )
        visibility[side] = counts
    return ScanDataset(
        root=None,
        dataset_id=scene.dataset_id,
        sides=SIDES,
        frames=frames,
        fiducials=fiducials,
        ground_truth=GroundTruth(fruitlets=truth.fruitlets, visibility=visibility),
    )


def simulate_dataset(
    spec: OrchardSpec, intrinsics: CameraIntrinsics | None = None
) -> ScanDataset:
    """Generate, plan, and render a full two-side dataset in memory."""
    scene, truth = generate_scene(spec)
    trajectory = plan_trajectory(spec)
    return _assemble_dataset(scene, trajectory, truth, intrinsics)


def export_dataset(
    scene: Scene,
    trajectory: Mapping[str, tuple[RigidTransform, ...]],
    truth: GroundTruth,
    root: Path | str,
    intrinsics: CameraIntrinsics | None = None,
    extra_manifest: Mapping[str, object] | None = None,
) -> ScanDataset:
    """Render the scene along the trajectory and write the dataset layout."""
    dataset = _assemble_dataset(scene, trajectory, truth, intrinsics)
    written_root = write_dataset(dataset, root, extra_manifest)
    return replace(dataset, root=written_root)
