"""Per-side fruitlet map assembly.

A BranchMap accumulates accepted sphere fits across the frames of one scan
side. Association is greedy: each observation merges into the nearest existing
track when the center distance is at or below the merge radius, otherwise it
opens a new track. Two averaging modes are offered:

- "pairwise" (default): the merged center and diameter are the plain mean of
  the track's current value and the observation. Recent observations dominate
  (the track's history halves in weight at every merge), which makes the rule
  order-sensitive but self-correcting after a bad early fit.
- "weighted": observation-count-weighted means, order-insensitive for
  commutative sequences of merges.

A merge can drag a track center to within the merge radius of a neighbouring
track. Greedy association alone does not prevent that (a merge moves a center
by up to half the radius), so after every merge the map collapses any track
pair left closer than the radius, keeping the earlier-seen track's id. The
separation invariant, no two track centers within the merge radius, therefore
holds for every map this module produces.

BranchMap values are immutable; integrate_observation returns a new map.
Building is deterministic for a fixed dataset, config, and base seed because
every observation's fit is seeded from (base seed, frame index, instance id)
rather than from shared generator state.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .dataset import DatasetError, ScanDataset, extract_instance_clouds
from .spherefit import (
    DegenerateSampleError,
    FitConfig,
    InsufficientPointsError,
    SphereModel,
    derive_observation_seed,
    downsample_points,
    ransac_sphere_fit,
)

__all__ = [
    "WITHIN_SIDE_RADIUS",
    "CROSS_SIDE_RADIUS",
    "MergeConfig",
    "FruitletTrack",
    "BranchMap",
    "config_digest",
    "integrate_observation",
    "build_side_map",
    "map_to_json",
    "map_from_json",
    "save_branch_map",
    "load_branch_map",
]

logger = logging.getLogger(__name__)

WITHIN_SIDE_RADIUS = 0.010
CROSS_SIDE_RADIUS = 0.020


@dataclass(frozen=True)
class MergeConfig:
    """Association radius and averaging mode for track integration."""

    merge_radius: float = WITHIN_SIDE_RADIUS
    averaging: str = "pairwise"  # or "weighted"

    def __post_init__(self) -> None:
        if not (self.merge_radius > 0):
            raise ValueError(f"merge_radius must be positive, got {self.merge_radius}")
        if self.averaging not in ("pairwise", "weighted"):
            raise ValueError(f"unknown averaging mode {self.averaging!r}")


@dataclass(frozen=True)
class FruitletTrack:
    """One fruitlet hypothesis: running center/diameter plus bookkeeping.

    ids are assigned in first-seen order and stay stable through merges
    (the earlier-seen track's id survives a collapse).
    """

    id: int
    center: tuple[float, float, float]
    diameter: float
    observations: int
    sides: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.id < 0:
            raise ValueError("track id must be non-negative")
        if self.observations < 1:
            raise ValueError("a track represents at least one observation")
        if not np.all(np.isfinite(self.center)) or not np.isfinite(self.diameter):
            raise ValueError("track center and diameter must be finite")
        if self.diameter <= 0:
            raise ValueError(f"diameter must be positive, got {self.diameter}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "sides", frozenset(self.sides))

    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class BranchMap:
    """Ordered track collection for one coordinate frame.

    frame_label names the frame the centers live in: a side label for
    single-side maps, "merged" for a combined map (expressed in side A's
    frame by the alignment stage).
    """

    frame_label: str
    tracks: tuple[FruitletTrack, ...] = ()
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.frame_label:
            raise ValueError("frame_label must be non-empty")
        object.__setattr__(self, "tracks", tuple(self.tracks))
        ids = [t.id for t in self.tracks]
        if len(set(ids)) != len(ids):
            raise ValueError("track ids must be unique within a map")


def config_digest(*configs: object) -> str:
    """sha256 over the sorted-key JSON of the given config dataclasses."""
    payload = [asdict(cfg) for cfg in configs]  # type: ignore[call-overload]
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _blend(
    track: FruitletTrack,
    center: np.ndarray,
    diameter: float,
    weight: int,
    sides: frozenset[str],
    cfg: MergeConfig,
) -> FruitletTrack:
    if cfg.averaging == "pairwise":
        new_center = (track.center_array() + center) / 2.0
        new_diameter = (track.diameter + diameter) / 2.0
    else:
        total = track.observations + weight
        new_center = (
            track.observations * track.center_array() + weight * center
        ) / total
        new_diameter = (track.observations * track.diameter + weight * diameter) / total
    return FruitletTrack(
        id=track.id,
        center=tuple(new_center),
        diameter=float(new_diameter),
        observations=track.observations + weight,
        sides=track.sides | sides,
    )


def _suppress_duplicates(
    tracks: list[FruitletTrack], moved: int, cfg: MergeConfig
) -> list[FruitletTrack]:
    # A merge may have dragged tracks[moved] inside the radius of a neighbour.
    # Collapse such pairs (earlier-seen track survives) until separation holds;
    # each collapse removes a track, so this terminates.
    while len(tracks) > 1:
        centers = np.array([t.center for t in tracks])
        dist = np.linalg.norm(centers - centers[moved], axis=1)
        dist[moved] = np.inf
        nearest = int(np.argmin(dist))
        if dist[nearest] > cfg.merge_radius:
            break
        keep, drop = (moved, nearest) if moved < nearest else (nearest, moved)
        absorbed = tracks[drop]
        tracks[keep] = _blend(
            tracks[keep],
            absorbed.center_array(),
            absorbed.diameter,
            absorbed.observations,
            absorbed.sides,
            cfg,
        )
        del tracks[drop]
        moved = keep
    return tracks


def integrate_observation(
    branch_map: BranchMap,
    obs: SphereModel,
    cfg: MergeConfig,
    *,
    sides: Iterable[str] = (),
    weight: int = 1,
) -> BranchMap:
    """Merge one accepted sphere fit into the map, or open a new track.

    The observation joins the nearest track when the center distance is at or
    below cfg.merge_radius; ties resolve to the earliest-seen track. weight > 1
    lets a whole track from another map count as its observation tally (the
    alignment stage uses this); plain fits use the default 1.
    """
    if weight < 1:
        raise ValueError("weight must be a positive observation count")
    sides = frozenset(sides)
    tracks = list(branch_map.tracks)
    if not tracks:
        first = FruitletTrack(0, obs.center, obs.diameter, weight, sides)
        return replace(branch_map, tracks=(first,))

    centers = np.array([t.center for t in tracks])
    dist = np.linalg.norm(centers - obs.center_array(), axis=1)
    nearest = int(np.argmin(dist))
    if dist[nearest] <= cfg.merge_radius:
        tracks[nearest] = _blend(
            tracks[nearest], obs.center_array(), obs.diameter, weight, sides, cfg
        )
        tracks = _suppress_duplicates(tracks, nearest, cfg)
    else:
        next_id = max(t.id for t in tracks) + 1
        tracks.append(FruitletTrack(next_id, obs.center, obs.diameter, weight, sides))
    return replace(branch_map, tracks=tuple(tracks))


def build_side_map(
    dataset: ScanDataset,
    side: str,
    fit_cfg: FitConfig | None = None,
    merge_cfg: MergeConfig | None = None,
) -> BranchMap:
    """Fit every masked instance in every frame of one side and integrate.

    Frames are consumed in frame_index order and instances in ascending id
    order; each observation's RANSAC is seeded from (base seed, frame index,
    instance id), so the result is independent of any extraction parallelism.
    Degenerate or under-populated clouds are logged and skipped; fits that
    fail the acceptance gate are skipped silently.
    """
    fit_cfg = fit_cfg if fit_cfg is not None else FitConfig()
    merge_cfg = merge_cfg if merge_cfg is not None else MergeConfig()
    if side not in dataset.frames:
        raise DatasetError(
            f"side {side!r} not in dataset (has {sorted(dataset.frames)})"
        )
    branch_map = BranchMap(
        frame_label=side,
        tracks=(),
        provenance={
            "dataset_id": dataset.dataset_id,
            "config_digest": config_digest(fit_cfg, merge_cfg),
            "seed": fit_cfg.rng_seed,
        },
    )
    for frame in dataset.frames[side]:
        for instance_id, cloud in extract_instance_clouds(frame):
            seed = derive_observation_seed(
                fit_cfg.rng_seed, frame.frame_index, instance_id
            )
            obs_cfg = replace(fit_cfg, rng_seed=seed)
            try:
                thinned = downsample_points(cloud, obs_cfg.max_points, seed)
                report = ransac_sphere_fit(thinned, obs_cfg)
            except (DegenerateSampleError, InsufficientPointsError) as exc:
                logger.warning(
                    "sphere fit failed, frame %d instance %d: %s",
                    frame.frame_index,
                    instance_id,
                    exc,
                )
                continue
            if not report.accepted:
                logger.debug(
                    "fit rejected, frame %d instance %d: inliers=%d diameter=%.4f",
                    frame.frame_index,
                    instance_id,
                    report.inlier_count,
                    report.model.diameter,
                )
                continue
            branch_map = integrate_observation(
                branch_map, report.model, merge_cfg, sides=(side,)
            )
    return branch_map


def map_to_json(branch_map: BranchMap) -> dict:
    """Plain-JSON form; floats keep full precision via repr round-tripping."""
    return {
        "frame_label": branch_map.frame_label,
        "provenance": dict(branch_map.provenance),
        "tracks": [
            {
                "id": t.id,
                "center": list(t.center),
                "diameter": t.diameter,
                "observations": t.observations,
                "sides": sorted(t.sides),
            }
            for t in branch_map.tracks
        ],
    }


def map_from_json(doc: Mapping) -> BranchMap:
    try:
        tracks = tuple(
            FruitletTrack(
                id=int(item["id"]),
                center=tuple(float(c) for c in item["center"]),
                diameter=float(item["diameter"]),
                observations=int(item["observations"]),
                sides=frozenset(item.get("sides", ())),
            )
            for item in doc["tracks"]
        )
        return BranchMap(
            frame_label=str(doc["frame_label"]),
            tracks=tracks,
            provenance=dict(doc.get("provenance", {})),
        )
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed branch map document: {exc}") from exc


def save_branch_map(path: Path | str, branch_map: BranchMap) -> None:
    Path(path).write_text(
        json.dumps(map_to_json(branch_map), indent=2) + "\n", encoding="utf-8"
    )


def load_branch_map(path: Path | str) -> BranchMap:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"branch map file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed JSON in {path}: {exc}") from exc
    return map_from_json(doc)
