"""Exhaustive-enumeration reference for the contrastive losses.

Written with plain loops over every (anchor, other node, view) term and no
numerical stabilisation, so it shares nothing with :mod:`ncla.loss` except
the definition. Only meant for small graphs.
"""
import math

import numpy as np


def _unit(rows):
    out = []
    for r in rows:
        norm = math.sqrt(sum(float(x) * float(x) for x in r))
        out.append([float(x) / norm if norm > 0 else 0.0 for x in r])
    return out


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _terms(i, own, other, adjacency, variant):
    """Yield ``(exponent_argument, is_positive, in_denominator)`` for anchor ``i``."""
    n = len(own)
    for j in range(n):
        neighbor = bool(adjacency[i][j]) and j != i
        if j == i:
            yield _dot(own[i], other[i]), True, True
            continue
        # intra-view node j
        pos = neighbor and variant in ("NCL", "NCL_NO_POS3")
        yield _dot(own[i], own[j]), pos, variant != "INFONCE"
        # inter-view node j
        pos = neighbor and variant in ("NCL", "NCL_NO_POS2")
        yield _dot(own[i], other[j]), pos, True


def anchor_loss(i, own, other, adjacency, tau, variant="NCL"):
    """Loss of anchor ``i`` whose view is ``own``; rows are used as given."""
    num = den = 0.0
    for theta, pos, in_den in _terms(i, own, other, adjacency, variant):
        w = math.exp(theta / tau)
        if pos:
            num += w
        if in_den:
            den += w
    return -math.log(num / den)


def two_view_loss(adjacency, h1, h2, tau, variant="NCL"):
    """Average anchor loss over both views; normalises rows first."""
    adjacency = np.asarray(adjacency)
    u, v = _unit(h1), _unit(h2)
    n = len(u)
    total = 0.0
    for i in range(n):
        total += anchor_loss(i, u, v, adjacency, tau, variant)
        total += anchor_loss(i, v, u, adjacency, tau, variant)
    return total / (2 * n)


def total_loss(adjacency, views, tau, pivot, variant="NCL"):
    k = len(views)
    return sum(
        two_view_loss(adjacency, views[m], views[pivot], tau, variant)
        for m in range(k) if m != pivot
    ) / k


def nt_xent(h1, h2, tau):
    """Standalone symmetric NT-Xent: one positive per anchor, all other nodes
    of both views as negatives."""
    u = np.asarray(_unit(h1))
    v = np.asarray(_unit(h2))
    n = len(u)

    def side(a, b):
        out = 0.0
        for i in range(n):
            pos = math.exp(float(a[i] @ b[i]) / tau)
            neg = sum(math.exp(float(a[i] @ a[j]) / tau) for j in range(n) if j != i)
            neg += sum(math.exp(float(a[i] @ b[j]) / tau) for j in range(n) if j != i)
            out += -math.log(pos / (pos + neg))
        return out

    return (side(u, v) + side(v, u)) / (2 * n)
