"""Central finite-difference gradient oracle, independent of the engine's
backward pass. All checks run in float64 with h = 1e-4."""

import numpy as np

from serlab import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central differences of a scalar-valued f at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return float(np.max(np.abs(analytic - numeric))) / scale


def check_scalar_fn(build, x0: np.ndarray, h: float = 1e-4) -> float:
    """Compare engine gradients of build(param_tensor) against central differences.

    `build` maps one parameter Tensor to a scalar loss Tensor and must be
    deterministic (re-seed any internal randomness per call).
    """
    x0 = np.asarray(x0, dtype=np.float64)

    def f(x):
        node = T.parameter(x.copy())
        return build(node).value

    p = T.parameter(x0.copy())
    loss = build(p)
    T.backward(loss)
    return max_rel_error(p.grad, numeric_grad(f, x0.copy(), h))
