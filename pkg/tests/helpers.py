"""Shared scene builders for renderer and 3D-path tests."""

import numpy as np

from tok4d.patchify import Camera


def frontal_camera(distance=3.0, focal=8.0, size=16, image=None, principal=None):
    """Camera on the +z world axis looking at the origin."""
    rot = np.diag([1.0, -1.0, -1.0])
    if image is None:
        image = np.zeros((size, size, 3))
    translation = -rot @ np.array([0.0, 0.0, distance])
    c = size / 2.0 if principal is None else principal
    return Camera(image, rot, translation, focal, c, c)


def orbit_camera(direction, distance=3.0, focal=32.0, size=32, image=None, rng=None):
    """Camera sitting on `direction`, looking at the origin."""
    direction = np.asarray(direction, dtype=np.float64)
    forward = -direction / np.linalg.norm(direction)
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 0.9:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, forward)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    center = direction / np.linalg.norm(direction) * distance
    if image is None:
        rng = rng or np.random.default_rng(0)
        image = rng.uniform(size=(size, size, 3))
    return Camera(image, rot, -rot @ center, focal, size / 2.0, size / 2.0)
