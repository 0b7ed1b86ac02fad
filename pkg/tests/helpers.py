"""Independent oracles shared by the tests."""
import numpy as np


def rodrigues(v):
    """Rotation matrices from axis-angle vectors via the exponential map, written out longhand."""
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    out = np.empty((len(v), 3, 3))
    for i, w in enumerate(v):
        theta = np.linalg.norm(w)
        if theta < 1e-12:
            out[i] = np.eye(3)
            continue
        k = w / theta
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        out[i] = np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * K @ K
    return out


def random_rotations(n, seed=0):
    rng = np.random.default_rng(seed)
    axes = rng.standard_normal((n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(0, np.pi, n)
    return rodrigues(axes * angles[:, None])


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def central_diff_grad(fn, params, eps):
    """Finite-difference gradient of scalar ``fn()`` w.r.t. each tensor in ``params`` (modified in place)."""
    import torch

    grads = []
    with torch.no_grad():
        for p in params:
            g = torch.zeros_like(p)
            flat, gflat = p.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads
