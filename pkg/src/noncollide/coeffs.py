"""Frozen coefficients of the linearised gap dynamics.

Gaps are indexed ``i = 0..d-1``; gap ``i`` is ``x_{i+1} - x_i`` in 1-based
particle numbering with a virtual particle ``x_0 = 0``, so gap 0 is the first
particle's position. The virtual particle has no interaction, no drift and no
noise.

Every function accepts arrays with any number of leading batch axes; the last
axis runs over gaps or particles. Sums over particles are accumulated in
ascending index order so a path's result does not depend on the batch it is
computed in.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import ZERO, SystemSpec, noise_scales

EPS_DEN = 1e-12


@dataclass
class FrozenCoeffs:
    alpha: np.ndarray
    beta: np.ndarray
    c: np.ndarray
    guard_activations: int | np.ndarray = 0


@dataclass(frozen=True)
class _Tables:
    # gamma with the virtual particle prepended: row/col 0 are zero
    gamma_ext: np.ndarray
    # per k (1..d): alpha weight gamma_{i,k} for each gap i, zero where k in {i, i+1}
    alpha_w: tuple
    # per k: beta weight gamma_{i,k} - gamma_{i+1,k}, same mask
    beta_w: tuple
    # rows of sigma_{i+1,.} - sigma_{i,.}
    noise_rows: np.ndarray
    c: np.ndarray
    # gamma_{i+1,i} per gap, 0 for gap 0
    adjacent: np.ndarray


@lru_cache(maxsize=64)
def tables(spec: SystemSpec) -> _Tables:
    d = spec.d
    g = np.zeros((d + 1, d + 1))
    g[1:, 1:] = spec.gamma
    np.fill_diagonal(g, 0.0)
    alpha_w, beta_w = [], []
    for k in range(1, d + 1):
        aw = np.array([0.0 if k in (i, i + 1) else g[i, k] for i in range(d)])
        bw = np.array([0.0 if k in (i, i + 1) else g[i, k] - g[i + 1, k] for i in range(d)])
        alpha_w.append(aw)
        beta_w.append(bw)
    sig = np.vstack([np.zeros(d), spec.sigma])
    rows = sig[1:] - sig[:-1]
    adjacent = np.array([0.0] + [g[i + 1, i] for i in range(1, d)])
    return _Tables(g, tuple(alpha_w), tuple(beta_w), rows, noise_scales(spec.sigma), adjacent)


def positions_from_gaps(gaps) -> np.ndarray:
    """Prefix sums: particle ``i`` sits at ``gaps[0] + ... + gaps[i]`` (0-based)."""
    return np.cumsum(np.asarray(gaps, dtype=float), axis=-1)


def compute_c(spec: SystemSpec) -> np.ndarray:
    return tables(spec).c.copy()


def _guard(x, eps, weight):
    """Clamp ``|x| < eps`` to ``+-eps`` (sign(0) = +1); count clamps where ``weight != 0``."""
    hit = np.abs(x) < eps
    out = np.where(hit, np.where(x < 0, -eps, eps), x)
    count = np.sum(hit & (weight != 0), axis=-1)
    return out, count


def freeze(spec: SystemSpec, gaps, eps_den: float = EPS_DEN) -> FrozenCoeffs:
    """Coefficients ``alpha``, ``beta`` of the frozen linear gap SDE at state ``gaps``.

    For gap ``i``, with positions ``p`` (``p_0 = 0``) and ``Y^{a,b} = p_a - p_b``::

        alpha_i = (b_{i+1}(p_{i+1}) - b_i(p_i)) / Y^{i+1,i}
                  - sum_{k != i,i+1} gamma_{i,k} / (Y^{i+1,k} Y^{i,k})
        beta_i  = sum_{k != i,i+1} (gamma_{i,k} - gamma_{i+1,k}) / Y^{i+1,k}

    Denominators below ``eps_den`` in magnitude are clamped; the number of
    clamps (per batch row) is returned in ``guard_activations``.
    """
    if not eps_den > 0:
        raise ValueError("eps_den must be positive")
    tb = tables(spec)
    gaps = np.asarray(gaps, dtype=float)
    d = spec.d
    p = np.zeros(gaps.shape[:-1] + (d + 1,))
    p[..., 1:] = positions_from_gaps(gaps)
    upper = p[..., 1:]
    lower = p[..., :-1]
    guards = np.zeros(gaps.shape[:-1], dtype=np.int64)

    if spec.drift.kind == ZERO:
        alpha = np.zeros_like(gaps)
    else:
        b = spec.drift.values(upper)
        b_lower = np.zeros_like(b)
        b_lower[..., 1:] = b[..., :-1]
        den, n = _guard(gaps, eps_den, np.ones(d))
        guards += n
        alpha = (b - b_lower) / den

    interaction = np.zeros_like(gaps)
    beta = np.zeros_like(gaps)
    for k in range(1, d + 1):
        aw = tb.alpha_w[k - 1]
        bw = tb.beta_w[k - 1]
        if not (aw.any() or bw.any()):
            continue
        pk = p[..., k : k + 1]
        up, n_up = _guard(upper - pk, eps_den, np.abs(aw) + np.abs(bw))
        guards += n_up
        if aw.any():
            lo, n_lo = _guard(lower - pk, eps_den, aw)
            guards += n_lo
            interaction = interaction + aw / (up * lo)
        if bw.any():
            beta = beta + bw / up
    alpha = alpha - interaction
    if guards.ndim == 0:
        guards = int(guards)
    return FrozenCoeffs(alpha, beta, tb.c, guards)


def project_noise(spec: SystemSpec, c, dW) -> np.ndarray:
    """Increments of the per-gap drivers ``B_i`` from particle increments ``dW``.

    ``out_i = sum_j (sigma_{i+1,j} - sigma_{i,j}) dW_j / c_i``, and 0 where ``c_i == 0``.
    """
    rows = tables(spec).noise_rows
    dW = np.asarray(dW, dtype=float)
    c = np.asarray(c, dtype=float)
    acc = np.zeros(dW.shape[:-1] + (spec.d,))
    for j in range(spec.d):
        col = rows[:, j]
        if col.any():
            acc = acc + col * dW[..., j : j + 1]
    safe = np.where(c > 0, c, 1.0)
    return np.where(c > 0, acc / safe, 0.0)
