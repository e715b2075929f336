"""Time stepping for the particle system.

Two flavours of the splitting scheme work on gaps:

* ``SD_COMPOSED`` carries the unconstrained auxiliary gaps through the whole
  run and maps them to positive gaps with ``sqrt(aux**2 + 4 gamma t)`` at every
  output time ``t``.
* ``SD_PER_STEP`` applies ``sqrt(aux**2 + 4 gamma dt)`` after each step and
  restarts the next step from the resulting positive gaps.

Baselines ``EULER_MARUYAMA`` and ``TAMED_EULER`` step the particle positions
directly and do not protect the ordering.

The ``simulate_*`` functions are batched over a leading path axis and are what
the Monte Carlo harness uses; ``run_*`` wrap them for a single ``BrownianGrid``.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .brownian import BrownianGrid, coarsen
from .coeffs import EPS_DEN, freeze, positions_from_gaps, project_noise, tables
from .model import ZERO, SystemSpec

EPS_ALPHA = 1e-8


class SchemeKind(str, enum.Enum):
    SD_COMPOSED = "sd-composed"
    SD_PER_STEP = "sd-per-step"
    EULER_MARUYAMA = "em"
    TAMED_EULER = "tamed"

    @property
    def is_sd(self) -> bool:
        return self in (SchemeKind.SD_COMPOSED, SchemeKind.SD_PER_STEP)


@dataclass
class Batch:
    """Output of a batched run over ``M`` paths and ``N`` steps.

    ``positions`` is ``(M, N+1, d)``; rows after a path aborts are NaN.
    ``gaps_aux`` / ``gaps_pos`` are only filled for the splitting schemes.
    ``increments`` holds, per step, the squared auxiliary increment
    ``max_i (aux_out - aux_in)**2`` over the particle differences ``i >= 1``
    for the splitting schemes.
    """

    times: np.ndarray
    positions: np.ndarray
    gaps_aux: np.ndarray | None
    gaps_pos: np.ndarray | None
    aborted: np.ndarray
    last_valid: np.ndarray
    guard_activations: np.ndarray
    violation_steps: np.ndarray
    ordered: np.ndarray
    increments: np.ndarray | None = None


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    gaps_aux: np.ndarray | None
    gaps_pos: np.ndarray | None
    guard_activations: int
    ordered_flags: np.ndarray
    violation_steps: int
    aborted: bool
    last_valid: int
    scheme: SchemeKind = SchemeKind.SD_COMPOSED
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        """Rows ``t,i,position,gap_aux,gap_pos,ordered`` (particle ``i`` 1-based)."""
        buf = io.StringIO()
        for key, value in self.meta.items():
            buf.write(f"# {key}={value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "i", "position", "gap_aux", "gap_pos", "ordered"])
        n_rows, d = self.positions.shape
        for n in range(n_rows):
            t = _fmt(self.times[n])
            ordered = int(bool(self.ordered_flags[n]))
            for i in range(d):
                aux = "" if self.gaps_aux is None else _fmt(self.gaps_aux[n, i])
                pos = "" if self.gaps_pos is None else _fmt(self.gaps_pos[n, i])
                w.writerow([t, i + 1, _fmt(self.positions[n, i]), aux, pos, ordered])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "%.17g" % x


def sd_step(spec, state, dt, dW, eps_alpha=EPS_ALPHA, eps_den=EPS_DEN, coeffs=None):
    """One exact step of the frozen linear gap SDE, all gaps updated simultaneously.

    With ``a = alpha * dt`` the update is
    ``D' = exp(a) D - beta * expm1(a) / alpha + c dB``, which is
    ``exp(a) (D - beta/alpha (1 - exp(-a)) + c exp(-a) dB)`` rearranged. For
    ``|a| < eps_alpha`` the limit ``D - beta dt + c dB`` is used.
    Returns ``(new_state, guard_activations)``.
    """
    state = np.asarray(state, dtype=float)
    fc = coeffs if coeffs is not None else freeze(spec, state, eps_den)
    dB = project_noise(spec, fc.c, dW)
    alpha, beta = fc.alpha, fc.beta
    noise = fc.c * dB
    with np.errstate(all="ignore"):
        a = alpha * dt
        small = np.abs(a) < eps_alpha
        safe_alpha = np.where(small, 1.0, alpha)
        full = np.exp(a) * state - beta * (np.expm1(a) / safe_alpha) + noise
        limit = state - beta * dt + noise
        out = np.where(small, limit, full)
    return out, fc.guard_activations


def sd_transform(aux, spec, t: float, dt: float, kind: SchemeKind) -> np.ndarray:
    """Map auxiliary gaps to positive gaps; gap 0 (first particle) passes through."""
    kind = SchemeKind(kind)
    s = t if kind is SchemeKind.SD_COMPOSED else dt
    adj = tables(spec).adjacent
    aux = np.asarray(aux, dtype=float)
    out = np.sqrt(aux * aux + 4.0 * adj * s)
    out[..., 0] = aux[..., 0]
    return out


def difference_gaps(d: int) -> slice:
    """Gap indices that are true particle differences (all gaps when ``d == 1``)."""
    return slice(1, None) if d > 1 else slice(None)


def _init(spec, M, N, dt, record_gaps):
    d = spec.d
    times = np.arange(N + 1) * dt
    positions = np.full((M, N + 1, d), np.nan)
    positions[:, 0] = spec.x0
    aux = pos = None
    if record_gaps:
        g0 = np.diff(np.concatenate([[0.0], spec.x0]))
        aux = np.full((M, N + 1, d), np.nan)
        pos = np.full((M, N + 1, d), np.nan)
        aux[:, 0] = g0
        pos[:, 0] = g0
    ordered = np.zeros((M, N + 1), dtype=bool)
    ordered[:, 0] = np.all(np.diff(spec.x0) > 0)
    return times, positions, aux, pos, ordered


def simulate_sd(spec, dW, dt, kind=SchemeKind.SD_COMPOSED, eps_alpha=EPS_ALPHA, eps_den=EPS_DEN) -> Batch:
    """Run the splitting scheme on increments ``dW`` of shape ``(M, N, d)``."""
    kind = SchemeKind(kind)
    if not kind.is_sd:
        raise ValueError(f"{kind} is not a splitting scheme")
    dW = np.asarray(dW, dtype=float)
    M, N, d = dW.shape
    times, positions, aux_rec, pos_rec, ordered = _init(spec, M, N, dt, True)
    state = np.broadcast_to(aux_rec[:, 0], (M, d)).copy()
    alive = np.ones(M, dtype=bool)
    last_valid = np.full(M, N)
    guards = np.zeros(M, dtype=np.int64)
    violations = np.zeros(M, dtype=np.int64)
    increments = np.full((M, N), np.nan)
    diff_gaps = difference_gaps(d)

    for n in range(N):
        new_aux, g = sd_step(spec, state, dt, dW[:, n], eps_alpha, eps_den)
        guards += np.where(alive, g, 0)
        with np.errstate(all="ignore"):
            gaps = sd_transform(new_aux, spec, times[n + 1], dt, kind)
            inc = np.max((new_aux - state)[:, diff_gaps] ** 2, axis=-1)
        finite = np.all(np.isfinite(gaps), axis=-1) & np.all(np.isfinite(new_aux), axis=-1)
        newly_dead = alive & ~finite
        last_valid[newly_dead] = n
        alive &= finite
        with np.errstate(all="ignore"):
            pos = positions_from_gaps(gaps)
            ok = np.all(np.diff(pos, axis=-1) > 0, axis=-1)
        violations += alive & ~ok
        ordered[:, n + 1] = alive & ok
        positions[alive, n + 1] = pos[alive]
        aux_rec[alive, n + 1] = new_aux[alive]
        pos_rec[alive, n + 1] = gaps[alive]
        increments[alive, n] = inc[alive]
        if kind is SchemeKind.SD_COMPOSED:
            state = np.where(alive[:, None], new_aux, state)
        else:
            state = np.where(alive[:, None], gaps, state)

    return Batch(times, positions, aux_rec, pos_rec, ~alive, last_valid, guards, violations, ordered, increments)


def particle_drift(spec: SystemSpec, x) -> np.ndarray:
    """Drift ``sum_{j != i} gamma_ij / (x_i - x_j) + b_i(x_i)`` of the original system."""
    x = np.asarray(x, dtype=float)
    d = spec.d
    out = np.zeros_like(x)
    with np.errstate(all="ignore"):
        for j in range(d):
            w = spec.gamma[:, j].copy()
            w[j] = 0.0
            diff = x - x[..., j : j + 1]
            diff[..., j] = 1.0
            out = out + w / diff
    if spec.drift.kind != ZERO:
        out = out + spec.drift.values(x)
    return out


def _diffuse(spec, dW):
    out = np.zeros(dW.shape[:-1] + (spec.d,))
    for j in range(spec.d):
        col = spec.sigma[:, j]
        if col.any():
            out = out + col * dW[..., j : j + 1]
    return out


def _simulate_explicit(spec, dW, dt, tamed):
    dW = np.asarray(dW, dtype=float)
    M, N, d = dW.shape
    times, positions, _, _, ordered = _init(spec, M, N, dt, False)
    x = np.broadcast_to(spec.x0, (M, d)).copy()
    alive = np.ones(M, dtype=bool)
    last_valid = np.full(M, N)
    violations = np.zeros(M, dtype=np.int64)
    for n in range(N):
        with np.errstate(all="ignore"):
            drift = particle_drift(spec, x)
            if tamed:
                sq = np.zeros(M)
                for i in range(d):
                    sq = sq + drift[:, i] * drift[:, i]
                drift = drift / (1.0 + dt * np.sqrt(sq))[:, None]
            x_new = x + drift * dt + _diffuse(spec, dW[:, n])
        finite = np.all(np.isfinite(x_new), axis=-1)
        newly_dead = alive & ~finite
        last_valid[newly_dead] = n
        alive &= finite
        with np.errstate(all="ignore"):
            ok = np.all(np.diff(x_new, axis=-1) > 0, axis=-1)
        violations += alive & ~ok
        ordered[:, n + 1] = alive & ok
        positions[alive, n + 1] = x_new[alive]
        x = np.where(alive[:, None], x_new, x)
    zeros = np.zeros(M, dtype=np.int64)
    return Batch(times, positions, None, None, ~alive, last_valid, zeros, violations, ordered)


def simulate_em(spec, dW, dt) -> Batch:
    """Euler-Maruyama on positions; a coincident pair makes the drift infinite and aborts the path."""
    return _simulate_explicit(spec, dW, dt, tamed=False)


def simulate_tamed(spec, dW, dt) -> Batch:
    """Euler with the whole drift vector divided by ``1 + dt * |drift|``."""
    return _simulate_explicit(spec, dW, dt, tamed=True)


def simulate(spec, dW, dt, kind, eps_alpha=EPS_ALPHA, eps_den=EPS_DEN) -> Batch:
    kind = SchemeKind(kind)
    if kind.is_sd:
        return simulate_sd(spec, dW, dt, kind, eps_alpha, eps_den)
    if kind is SchemeKind.EULER_MARUYAMA:
        return simulate_em(spec, dW, dt)
    return simulate_tamed(spec, dW, dt)


def _single(spec, grid: BrownianGrid, factor: int, kind, **kw) -> Trajectory:
    if grid.d != spec.d:
        raise ValueError(f"grid has d={grid.d}, spec has d={spec.d}")
    dW = coarsen(grid, factor)[None]
    dt = grid.dt_fine * factor
    b = simulate(spec, dW, dt, kind, **kw)
    return Trajectory(
        times=b.times,
        positions=b.positions[0],
        gaps_aux=None if b.gaps_aux is None else b.gaps_aux[0],
        gaps_pos=None if b.gaps_pos is None else b.gaps_pos[0],
        guard_activations=int(b.guard_activations[0]),
        ordered_flags=b.ordered[0],
        violation_steps=int(b.violation_steps[0]),
        aborted=bool(b.aborted[0]),
        last_valid=int(b.last_valid[0]),
        scheme=SchemeKind(kind),
    )


def run_sd(spec, grid, factor=1, kind=SchemeKind.SD_COMPOSED, eps_alpha=EPS_ALPHA, eps_den=EPS_DEN) -> Trajectory:
    return _single(spec, grid, factor, kind, eps_alpha=eps_alpha, eps_den=eps_den)


def run_em(spec, grid, factor=1) -> Trajectory:
    return _single(spec, grid, factor, SchemeKind.EULER_MARUYAMA)


def run_tamed(spec, grid, factor=1) -> Trajectory:
    return _single(spec, grid, factor, SchemeKind.TAMED_EULER)
