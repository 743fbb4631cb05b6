import numpy as np

from gna import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = [index] if index is not None else None
    positions = np.ndindex(x.shape) if it is None else it
    for idx in positions:
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_op(build, *arrays, h=1e-5, seed=0):
    """Gradient check ``sum(R * build(*tensors))`` for a random weighting R."""
    tensors = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    r = np.random.default_rng(seed).normal(size=out.shape)
    loss = T.sum(T.mul(out, r))
    loss.backward()
    errs = []
    for t in tensors:
        def f(t=t):
            with T.no_grad():
                return float(np.sum(build(*tensors).data * r))
        errs.append(rel_error(t.grad, numeric_grad(f, t.data, h)))
    return max(errs)
