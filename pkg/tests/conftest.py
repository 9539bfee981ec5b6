"""Shared scene builders and reference helpers for the test suite."""

import numpy as np
import pytest

from covis.covismap import build_covis_map
from covis.geometry import CameraView
from covis.proximity import TrainingSet, train_classifier
from covis.synth import SceneSpec, generate_scene, oracle_correspondences


def toy_scene_dict(seed=7):
    """Forward-facing 3-view scene: sphere in front of a tilted backdrop.

    Near-full mutual coverage, so the scene covisibility score lands well
    above 0.7. The tilt keeps depth varying on every axis.
    """
    return {
        "resolution": [64, 48],
        "focal": 48.0,
        "seed": seed,
        "colmap_points": 300,
        "rig": {"kind": "forward_facing", "views": 3, "baseline": 0.5},
        "surfaces": [
            {"kind": "plane", "point": [0, 0, 6], "normal": [0.15, 0.1, -1.0],
             "color": [200, 80, 80]},
            {"kind": "sphere", "center": [0, 0, 4], "radius": 1.0,
             "color": [80, 200, 80]},
        ],
    }


def wide_scene_dict(seed=7):
    """Three wide-baseline converging views; strong triangulation geometry."""
    return {
        "resolution": [64, 48],
        "focal": 48.0,
        "seed": seed,
        "colmap_points": 200,
        "rig": {"kind": "explicit", "poses": [
            {"position": [-3.5, 0.3, 0.0], "look_at": [0, 0, 4.5]},
            {"position": [0.0, -0.2, -0.5], "look_at": [0, 0, 4.5]},
            {"position": [3.5, 0.4, 0.2], "look_at": [0, 0, 4.5]},
        ]},
        "surfaces": [
            {"kind": "plane", "point": [0, 0, 8], "normal": [0.15, 0.1, -1.0],
             "color": [200, 80, 80]},
            {"kind": "sphere", "center": [0, 0, 4.5], "radius": 1.0,
             "color": [80, 200, 80]},
        ],
    }


WALL_BOX = {"min": [-6.4, -2.0, 2.4], "max": [-5.4, 2.0, 3.2]}


def wall_scene_dict(seed=11):
    """Backdrop seen by all three views plus a wall seen only by view 0."""
    return {
        "resolution": [64, 48],
        "focal": 24.0,
        "seed": seed,
        "colmap_points": 250,
        "rig": {"kind": "explicit", "poses": [
            {"position": [-1.2, 0, 0], "look_at": [-4.4, 0.0, 2.6]},
            {"position": [0.0, 0, 0], "look_at": [0.0, 0.0, 8.0]},
            {"position": [0.8, 0, 0], "look_at": [0.8, 0.0, 8.0]},
        ]},
        "surfaces": [
            {"kind": "plane", "point": [0, 0, 8], "normal": [0.15, 0.1, -1.0],
             "color": [190, 90, 90]},
            {"kind": "box", "min": WALL_BOX["min"], "max": WALL_BOX["max"],
             "color": [90, 90, 190]},
        ],
    }


def patch_scene_dict(seed=5):
    """Thin finite patch fully inside every frustum of an 8-view arc.

    Every matched pixel is observed by all 8 views, which makes the
    reprojection gate reject heavy correspondence noise outright.
    """
    poses = []
    k, arc = 8, np.deg2rad(100.0)
    for i in range(k):
        a = arc * (i / (k - 1) - 0.5)
        poses.append({
            "position": [8 * np.sin(a), 0.25 * np.sin(3 * a), 8 - 8 * np.cos(a)],
            "look_at": [0, 0, 8],
        })
    return {
        "resolution": [32, 24],
        "focal": 40.0,
        "seed": seed,
        "colmap_points": 60,
        "rig": {"kind": "explicit", "poses": poses},
        "surfaces": [
            {"kind": "box", "min": [-1.5, -1.1, 8.0], "max": [1.5, 1.1, 8.001],
             "color": [200, 80, 80]},
        ],
    }


def build_scene(spec_dict, noise_px=0.0, dropout=0.0, corr_seed=0):
    """Generate a bundle with oracle correspondences attached."""
    spec = SceneSpec.from_dict(spec_dict)
    bundle, gt = generate_scene(spec)
    csets = oracle_correspondences(
        bundle, gt, noise_px=noise_px, dropout=dropout, seed=corr_seed
    )
    bundle.correspondences.extend(csets)
    return bundle, gt


def build_maps(bundle, min_conf=0.0):
    """Unrefined covisibility maps for every view of a bundle."""
    n = len(bundle.views)
    return [
        build_covis_map(
            view,
            [c for c in bundle.correspondences if c.src_view == view.view_id],
            n_views=n,
            min_conf=min_conf,
        )
        for view in bundle.views
    ]


def identity_view(view_id=0, f=100.0, width=100, height=100, tz=0.0):
    K = np.array([[f, 0.0, width / 2.0], [0.0, f, height / 2.0], [0.0, 0.0, 1.0]])
    H = np.eye(4)
    H[2, 3] = tz
    return CameraView(view_id=view_id, K=K, H=H, width=width, height=height)


def unit_sphere_points(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sphere_training_set(seed=0, n=1000):
    """Separable toy set: positives on the unit sphere, negatives at radius >= 2."""
    rng = np.random.default_rng(seed)
    positives = unit_sphere_points(n, rng)
    negatives = unit_sphere_points(n, rng) * rng.uniform(2.0, 3.0, size=(n, 1))
    return TrainingSet(
        positives=positives, negatives=negatives, center=np.zeros(3), scale=3.0
    )


@pytest.fixture(scope="session")
def trained_sphere_model():
    """Classifier trained once on the toy sphere set (reused across tests)."""
    return train_classifier(sphere_training_set(seed=0), iters=1000, lr=0.001, seed=1)


@pytest.fixture(scope="session")
def demo_sphere_model():
    """Classifier with production-style negatives (sampled around and inside).

    Shell-only negatives leave the sphere interior attractive; this model's
    rejection-sampled negatives carve out the interior too, so descent tests
    converge to the surface like the full pipeline does.
    """
    from covis.cloud import SOURCE_COLMAP, PointCloud
    from covis.proximity import make_training_set

    rng = np.random.default_rng(2)
    cloud = PointCloud.build(unit_sphere_points(800, rng), source=SOURCE_COLMAP)
    ts = make_training_set(cloud, ratio=1.0, r_neg=0.25, seed=3)
    return train_classifier(ts, iters=1000, lr=0.001, seed=4)


@pytest.fixture(scope="session")
def toy_bundle():
    return build_scene(toy_scene_dict())


@pytest.fixture(scope="session")
def wide_bundle():
    return build_scene(wide_scene_dict())
