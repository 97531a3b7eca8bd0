"""Central finite-difference gradient checking.

The numeric side is computed purely with numpy on raw arrays, independent of
the autodiff tape, so it can serve as an oracle for every backward rule.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numeric_gradient(fn, arrays, wrt: int, step: float = 1e-5, indices=None):
    """Central-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[wrt]``.

    ``fn`` receives plain float64 arrays and returns a float. ``indices``
    optionally restricts the check to a subset of flat coordinates.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    x = arrays[wrt]
    flat = x.reshape(-1)
    coords = range(flat.size) if indices is None else indices
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        up = fn(*arrays)
        flat[i] = orig - step
        down = fn(*arrays)
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation scaled by the gradient magnitude (floored at 1e-3)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-3)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build, arrays, step: float = 1e-5, max_coords: int | None = None, rng=None):
    """Compare tape gradients of ``build(*tensors) -> scalar Tensor`` with the oracle.

    Returns the worst relative error over all inputs. Runs in float64
    regardless of the ambient default dtype. ``max_coords`` subsamples large
    inputs to keep end-to-end checks fast.
    """
    with T.default_dtype(np.float64):
        tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        out = build(*tensors)
        out.backward()

        def scalar_fn(*raw):
            with T.default_dtype(np.float64):
                return build(*[Tensor(r) for r in raw]).item()

        worst = 0.0
        for i, t in enumerate(tensors):
            if t.grad is None:
                raise AssertionError(f"input {i} received no gradient")
            indices = None
            if max_coords is not None and t.data.size > max_coords:
                gen = rng or np.random.default_rng(0)
                indices = gen.choice(t.data.size, size=max_coords, replace=False)
                numeric = numeric_gradient(scalar_fn, arrays, i, step, indices=indices)
                err = relative_error(t.grad.reshape(-1)[indices], numeric.reshape(-1)[indices])
            else:
                numeric = numeric_gradient(scalar_fn, arrays, i, step)
                err = relative_error(t.grad, numeric)
            worst = max(worst, err)
        return worst


def _away_from(rng, shape, kink: float = 0.0, margin: float = 0.1, spread: float = 1.0):
    """Random values kept at least ``margin`` away from a non-smooth point."""
    x = rng.normal(scale=spread, size=shape)
    x = x + np.sign(x) * margin
    x[x == 0] = margin
    return x + kink


def operation_suite(rng: np.random.Generator, instances: int = 20):
    """Yield (name, case_fn) pairs; each call of case_fn returns a rel. error.

    Covers every differentiable operation of the engine plus the two graph
    regularization losses; inputs are small and bounded away from kinks.
    """
    from . import graph as G

    def rand(*shape, lo=-1.0, hi=1.0):
        return rng.uniform(lo, hi, size=shape)

    cases = {
        "matmul": lambda: check_gradients(
            lambda a, b: (a @ b).sum(), [rand(3, 4), rand(4, 2)]
        ),
        "matmul_batched": lambda: check_gradients(
            lambda a, b: (a @ b).sum(), [rand(2, 3, 4), rand(4, 2)]
        ),
        "add": lambda: check_gradients(lambda a, b: (a + b).sum(), [rand(3, 4), rand(4)]),
        "sub": lambda: check_gradients(lambda a, b: (a - b).sum(), [rand(3, 4), rand(3, 4)]),
        "mul": lambda: check_gradients(lambda a, b: (a * b).sum(), [rand(3, 4), rand(3, 1)]),
        "div": lambda: check_gradients(
            lambda a, b: (a / b).sum(), [rand(3, 3), rand(3, 3, lo=0.5, hi=2.0)]
        ),
        "scalar_ops": lambda: check_gradients(
            lambda a: ((2.0 * a + 1.0 - a / 3.0) * 0.5 - 1.0).sum(), [rand(4, 4)]
        ),
        "pow": lambda: check_gradients(lambda a: (a**3).sum(), [rand(3, 3)]),
        "sqrt": lambda: check_gradients(
            lambda a: a.sqrt().sum(), [rand(3, 3, lo=0.5, hi=2.0)]
        ),
        "exp": lambda: check_gradients(lambda a: a.exp().sum(), [rand(3, 3)]),
        "log": lambda: check_gradients(
            lambda a: a.log().sum(), [rand(3, 3, lo=0.5, hi=3.0)]
        ),
        "relu": lambda: check_gradients(
            lambda a: a.relu().sum(), [_away_from(rng, (4, 4))]
        ),
        "clamp": lambda: check_gradients(
            lambda a: a.clamp(-0.5, 0.5).sum(),
            [_away_from(rng, (4, 4), margin=0.05) * 0.9],
        ),
        "softmax": lambda: check_gradients(
            lambda a: (a.softmax(axis=-1) * a.softmax(axis=-1)).sum(), [rand(3, 5)]
        ),
        "sum_axis": lambda: check_gradients(
            lambda a: (a.sum(axis=1) ** 2).sum(), [rand(3, 4)]
        ),
        "mean_axis": lambda: check_gradients(
            lambda a: (a.mean(axis=(0, 2)) ** 2).sum(), [rand(2, 3, 4)]
        ),
        "transpose": lambda: check_gradients(
            lambda a: (a.transpose() @ a).sum(), [rand(3, 4)]
        ),
        "reshape_permute": lambda: check_gradients(
            lambda a: (a.permute(1, 0, 2).reshape(4, 6) ** 2).sum(), [rand(2, 4, 3)]
        ),
        "diagonal": lambda: check_gradients(
            lambda a: (a.diagonal() ** 2).sum(), [rand(4, 4)]
        ),
        "diag_embed": lambda: check_gradients(
            lambda a: (a.diag_embed() @ a.diag_embed()).sum(), [rand(4)]
        ),
        "conv2d": lambda: check_gradients(
            lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1).sum(),
            [rand(2, 4, 4), rand(3, 2, 3, 3), rand(3)],
        ),
        "conv2d_stride2_edge": lambda: check_gradients(
            lambda x, w, b: (T.conv2d(x, w, b, stride=2, padding=1, pad_mode="edge") ** 2).sum(),
            [rand(2, 5, 5), rand(3, 2, 3, 3), rand(3)],
        ),
        "conv2d_reflect": lambda: check_gradients(
            lambda x, w, b: (T.conv2d(x, w, b, stride=1, padding=1, pad_mode="reflect") ** 2).sum(),
            [rand(1, 4, 4), rand(2, 1, 3, 3), rand(2)],
        ),
        "adaptive_avg_pool": lambda: check_gradients(
            lambda x: (T.adaptive_avg_pool2d(x, 2, 3) ** 2).sum(), [rand(2, 5, 7)]
        ),
        "bilinear_upsample": lambda: check_gradients(
            lambda x: (T.upsample_bilinear(x, 5, 6) ** 2).sum(), [rand(2, 3, 3)]
        ),
        "batch_norm": lambda: check_gradients(
            lambda x, g, b: (
                T.batch_norm(
                    x, g, b, np.zeros(3), np.ones(3), training=True, channel_axis=1
                )
                ** 2
            ).sum(),
            [rand(2, 3, 4, 4), rand(3, lo=0.5, hi=1.5), rand(3)],
        ),
        "kl_divergence_loss": lambda: check_gradients(
            lambda m, s: G.kl_divergence(m, s), [rand(1, 4, 3), rand(1, 4, 3)]
        ),
        "diag_log_loss": lambda: check_gradients(
            lambda z: G.adjacency_gain_and_diag_loss(
                G.build_adjacency(z), epsilon=1e-7
            )[1],
            [_away_from(rng, (1, 4, 3), margin=0.2)],
        ),
    }

    for name, case in cases.items():
        yield name, case, instances


def run_operation_suite(op_name: str | None = None, instances: int = 20, seed: int = 0):
    """Run the finite-difference suite; returns [(name, max_err, passed)]."""
    rng = np.random.default_rng(seed)
    results = []
    for name, case, n in operation_suite(rng, instances):
        if op_name is not None and name != op_name:
            continue
        worst = max(case() for _ in range(n))
        results.append((name, worst, worst <= 1e-4))
    if op_name is not None and not results:
        known = [name for name, _, _ in operation_suite(np.random.default_rng(0), 1)]
        raise ValueError(f"unknown operation {op_name!r}; known: {', '.join(known)}")
    return results
