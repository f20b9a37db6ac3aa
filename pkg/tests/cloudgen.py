"""Synthetic point-cloud builders shared by the test modules.

These are written directly from sphere geometry (area-uniform sampling via the
z-coordinate trick) so they are independent of the fitting code under test.
"""

import numpy as np


def sphere_cloud(center, radius, n, rng):
    """n points area-uniform on a full sphere surface."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return np.asarray(center, dtype=float) + radius * d


def cap_cloud(center, radius, n, rng, visible_fraction=0.5):
    """n points area-uniform on the camera-facing cap covering the given area fraction.

    The cap faces -z (toward a camera looking down +z). visible_fraction=0.5 is
    the front hemisphere, 1.0 the full sphere.
    """
    if not (0 < visible_fraction <= 1):
        raise ValueError("visible_fraction must be in (0, 1]")
    cos_a = 1.0 - 2.0 * visible_fraction
    mu = rng.uniform(cos_a, 1.0, n)          # cos of polar angle from the -z pole
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    s = np.sqrt(1.0 - mu * mu)
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), -mu], axis=1)
    return np.asarray(center, dtype=float) + radius * dirs


def add_depth_noise(cloud, sigma, rng):
    """Stereo-style noise: perturbs z only."""
    out = np.array(cloud, dtype=float)
    out[:, 2] += rng.normal(0.0, sigma, size=len(out))
    return out


def contaminated_cap_cloud(center, radius, n, rng, bg_fraction=0.3, bg_depth=0.060,
                           sigma=0.0011):
    """Front hemisphere plus mask-bleed: a background patch bg_depth behind the
    front pole, spread over the fruit's projected footprint."""
    center = np.asarray(center, dtype=float)
    n_bg = round(bg_fraction * n)
    cap = cap_cloud(center, radius, n - n_bg, rng, visible_fraction=0.5)
    ang = rng.uniform(0.0, 2.0 * np.pi, n_bg)
    rad = radius * np.sqrt(rng.uniform(0.0, 1.0, n_bg))
    bg = np.stack(
        [
            center[0] + rad * np.cos(ang),
            center[1] + rad * np.sin(ang),
            np.full(n_bg, center[2] - radius + bg_depth),
        ],
        axis=1,
    )
    cloud = np.concatenate([cap, bg])
    if sigma > 0:
        cloud = add_depth_noise(cloud, sigma, rng)
    return cloud
