"""Independent reference routines used only by the tests."""

import numpy as np


def central_difference(f, arrays: dict, eps: float = 1e-6) -> dict:
    """Numerical gradient of scalar ``f()`` w.r.t. every array in ``arrays`` (perturbed in place)."""
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + eps
            up = f()
            arr[i] = old - eps
            down = f()
            arr[i] = old
            g[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_rel_error(a: dict, b: dict, floor: float = 1e-5) -> float:
    """Largest |a - b| / max(|a|, |b|, floor) over every entry.

    The floor sits near the absolute round-off of a central difference with
    step 1e-6 on O(1) losses (about 1e-10), so near-zero entries do not
    report noise as relative error.
    """
    worst = 0.0
    for k in a:
        denom = np.maximum(np.maximum(np.abs(a[k]), np.abs(b[k])), floor)
        worst = max(worst, float((np.abs(a[k] - b[k]) / denom).max()))
    return worst


def loop_mlp(weights, biases, x):
    """Scalar-loop forward pass of a ReLU MLP with an affine last layer."""
    h = list(map(float, x))
    for li, (w, b) in enumerate(zip(weights, biases)):
        nxt = []
        for o in range(w.shape[0]):
            s = float(b[o])
            for i in range(w.shape[1]):
                s += float(w[o, i]) * h[i]
            nxt.append(s if li == len(weights) - 1 else max(s, 0.0))
        h = nxt
    return np.array(h)


def brute_mse(proposals, gt):
    k, t, a = proposals.shape
    out = np.zeros(k)
    for i in range(k):
        s = 0.0
        for j in range(t):
            for d in range(a):
                s += (proposals[i, j, d] - gt[j, d]) ** 2
        out[i] = s / (t * a)
    return out


def brute_argmin(values):
    best = 0
    for i in range(1, len(values)):
        if values[i] < values[best]:
            best = i
    return best


def hom(position, quat_xyzw):
    """4x4 homogeneous matrix from a position and an (x, y, z, w) quaternion, written out by hand."""
    x, y, z, w = quat_xyzw
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = position
    return m


def sampled_segment_hits_circle(p0, p1, center, radius, n: int = 20001) -> bool:
    s = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray(p0) * (1 - s) + np.asarray(p1) * s
    return bool((np.linalg.norm(pts - np.asarray(center), axis=1) <= radius).any())
