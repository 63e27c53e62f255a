"""Dense and edge-sparse kernels with hand-written vector-Jacobian products.

Every forward kernel ``k`` used on the training path has a companion
``k_vjp`` that maps an upstream gradient to gradients of its inputs.
Edge-indexed kernels work on the closed-neighbourhood layout produced by
:attr:`ncla.graph.Graph.closed_edges`: arrays ``row``/``col`` of length
``|E| + N`` grouped by ``row`` with group boundaries ``ptr``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.2


def _check_finite(out, name):
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"{name}: non-finite output")
    return out


def matmul(a, b):
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return a @ b


def matmul_vjp(a, b, g):
    return g @ b.T, a.T @ g


def scatter_rows(values, index, n):
    """``out[r] = sum(values[e] for e with index[e] == r)``, deterministic order."""
    m = sp.csr_matrix(
        (np.ones(len(index), dtype=values.dtype), (index, np.arange(len(index)))),
        shape=(n, len(index)),
    )
    return np.asarray(m @ values)


def segment_sum(values, ptr):
    """Sum contiguous non-empty segments ``values[ptr[i]:ptr[i+1]]``."""
    return np.add.reduceat(values, ptr[:-1], axis=0)


def row_concat_pairs(z, row, col):
    """Per-edge feature pairs ``[z_row ∥ z_col]`` as an ``(E, 2F')`` matrix."""
    return np.concatenate([z[row], z[col]], axis=1)


def row_concat_pairs_vjp(g, row, col, n):
    d = g.shape[1] // 2
    return scatter_rows(g[:, :d], row, n) + scatter_rows(g[:, d:], col, n)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def leaky_relu_vjp(x, g, slope=LEAKY_SLOPE):
    return np.where(x > 0, g, slope * g)


def elu(x):
    # expm1 on the clipped branch avoids overflow warnings for large positive x
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_vjp(x, g):
    return np.where(x > 0, g, g * np.exp(np.minimum(x, 0)))


def exp(x):
    with np.errstate(over="ignore"):
        return _check_finite(np.exp(x), "exp")


def exp_vjp(y, g):
    return g * y


def neighborhood_softmax(logits, ptr):
    """Softmax of ``logits`` within each group ``ptr[i]:ptr[i+1]``.

    The group maximum is subtracted first. Groups must be non-empty.
    """
    if np.any(np.diff(ptr) <= 0):
        raise ValueError("neighborhood_softmax needs non-empty groups")
    counts = np.diff(ptr)
    m = np.maximum.reduceat(logits, ptr[:-1])
    e = np.exp(logits - np.repeat(m, counts))
    return e / np.repeat(segment_sum(e, ptr), counts)


def neighborhood_softmax_vjp(alpha, g, ptr):
    counts = np.diff(ptr)
    dot = segment_sum(alpha * g, ptr)
    return alpha * (g - np.repeat(dot, counts))


def weighted_neighbor_sum(alpha, z, ptr, col):
    """``out_i = sum_{e in group i} alpha_e * z[col_e]``."""
    return segment_sum(alpha[:, None] * z[col], ptr)


def weighted_neighbor_sum_vjp(alpha, z, ptr, col, g):
    counts = np.diff(ptr)
    g_edges = np.repeat(g, counts, axis=0)
    d_alpha = np.einsum("ef,ef->e", g_edges, z[col])
    d_z = scatter_rows(alpha[:, None] * g_edges, col, z.shape[0])
    return d_alpha, d_z


def l2_normalize_rows(x):
    """Row-normalise ``x``; all-zero rows stay zero.

    Returns ``(u, norms)``; rows with ``norms == 0`` are the flagged ones.
    """
    # scale by the row max so tiny rows do not underflow to a zero norm
    peak = np.max(np.abs(x), axis=1) if x.shape[1] else np.zeros(x.shape[0], dtype=x.dtype)
    safe_peak = np.where(peak > 0, peak, 1.0)
    scaled = x / safe_peak[:, None]
    norms = np.sqrt(np.einsum("ij,ij->i", scaled, scaled)) * peak
    u = scaled / np.where(peak > 0, norms / safe_peak, 1.0)[:, None]
    return u, norms


def l2_normalize_rows_vjp(u, norms, g):
    safe = np.where(norms > 0, norms, 1.0)
    proj = np.einsum("ij,ij->i", u, g)
    out = (g - u * proj[:, None]) / safe[:, None]
    out[norms == 0] = 0.0
    return out


def inner_product_rows(a, b):
    if a.shape != b.shape:
        raise ValueError(f"inner_product_rows shape mismatch {a.shape} vs {b.shape}")
    return np.einsum("ij,ij->i", a, b)


def inner_product_rows_vjp(a, b, g):
    return g[:, None] * b, g[:, None] * a


# --------------------------------------------------------------------------
# finite-difference gradient check


@dataclass
class GradcheckReport:
    step: float
    tolerance: float
    floor: float = 0.0
    max_rel_error: dict = field(default_factory=dict)

    @property
    def worst(self):
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self):
        return self.worst < self.tolerance

    def as_dict(self):
        return {
            "step": self.step,
            "tolerance": self.tolerance,
            "floor": self.floor,
            "max_rel_error": dict(self.max_rel_error),
            "worst": self.worst,
            "passed": self.passed,
        }


def relative_error(analytic, numeric, floor):
    """Entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def resolution_floor(value, step, tolerance):
    """Smallest gradient magnitude a central difference can resolve to ``tolerance``.

    Round-off in ``(f(x+h) - f(x-h)) / 2h`` is about ``eps * |f| / h``;
    below ten times that divided by the tolerance, entries are effectively
    compared in absolute terms.
    """
    return 10 * np.finfo(np.float64).eps * max(abs(value), 1.0) / (step * tolerance)


def gradcheck(f, params, step=1e-6, tolerance=1e-5, floor=None):
    """Compare analytic gradients of ``f`` with central differences.

    ``f(params)`` must return ``(value, grads)`` where ``grads`` maps the
    same keys as ``params`` to arrays of matching shape. All arithmetic is
    done in float64; ``params`` is not modified. ``floor`` defaults to
    :func:`resolution_floor`.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    value, grads = f(params)
    if floor is None:
        floor = resolution_floor(value, step, tolerance)
    report = GradcheckReport(step=step, tolerance=tolerance, floor=floor)
    for key, value in params.items():
        analytic = np.asarray(grads[key], dtype=np.float64)
        if analytic.shape != value.shape:
            raise ValueError(f"gradient for {key!r} has shape {analytic.shape}, expected {value.shape}")
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = f(params)[0]
            flat[idx] = orig - step
            lo = f(params)[0]
            flat[idx] = orig
            numeric.flat[idx] = (hi - lo) / (2 * step)
        err = relative_error(analytic, numeric, floor)
        report.max_rel_error[key] = float(err.max()) if err.size else 0.0
    return report
