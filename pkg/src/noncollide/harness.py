"""Monte Carlo experiments: strong error, local increments, collisions, moments.

Paths are split into fixed-size chunks (``CHUNK`` paths each) that are
simulated independently and concatenated in path order before any statistic
is taken, so results do not depend on how many worker processes run the
chunks.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .brownian import _is_pow2, coarsen_increments, generate_batch
from .coeffs import EPS_DEN
from .integrators import EPS_ALPHA, SchemeKind, difference_gaps, simulate
from .model import ZERO, SystemSpec

CHUNK = 250
DEFAULT_SCHEME = SchemeKind.SD_PER_STEP
RATE_BAND = (0.4, 1.8)
GAP_RATE_BAND = (0.8, 2.2)
LOCAL_RATE_BAND = (0.8, 1.2)
Z_MAX = 4.0


class PlanError(ValueError):
    """Inconsistent experiment parameters (factors, grid size, path count)."""


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("NONCOLLIDE_WORKERS", "1")))
    except ValueError:
        return 1


def _chunks(M: int):
    return [range(s, min(s + CHUNK, M)) for s in range(0, M, CHUNK)]


def _map(fn, tasks, workers):
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def fit_rate(step_sizes, values) -> tuple[float, float]:
    """Least-squares line through ``(log2 dt, log2 value)``; returns ``(slope, intercept)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.log2(np.asarray(step_sizes, dtype=float))
        y = np.log2(np.asarray(values, dtype=float))
    keep = np.isfinite(x) & np.isfinite(y)
    if keep.sum() < 2:
        return math.nan, math.nan
    x, y = x[keep], y[keep]
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


def _mean_se(v):
    v = v[np.isfinite(v)]
    if v.size == 0:
        return math.nan, math.nan, 0
    with np.errstate(over="ignore", invalid="ignore"):
        se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
        return float(v.mean()), se, int(v.size)


def _check_plan(n_fine, factors, ref_factor=None, M=None):
    if not _is_pow2(n_fine):
        raise PlanError(f"n_fine must be a power of two, got {n_fine}")
    for f in factors:
        if not _is_pow2(f) or n_fine % f:
            raise PlanError(f"factor {f} must be a power of two dividing n_fine={n_fine}")
        if ref_factor is not None and (f % ref_factor or f == ref_factor):
            raise PlanError(f"ref_factor {ref_factor} must strictly divide factor {f}")
    if ref_factor is not None and (not _is_pow2(ref_factor) or n_fine % ref_factor):
        raise PlanError(f"ref_factor {ref_factor} must be a power of two dividing n_fine={n_fine}")
    if M is not None and M < 2:
        raise PlanError("need at least 2 paths")


# ---------------------------------------------------------------- strong error


@dataclass
class ConvergenceTable:
    step_sizes: list
    err_sq_mean: list
    err_sq_se: list
    err_gap_sq_mean: list
    err_gap_sq_se: list
    n_paths: list
    aborted: list
    fitted_rate: float
    fitted_intercept: float
    gap_fitted_rate: float
    gap_fitted_intercept: float
    meta: dict = field(default_factory=dict)

    def in_band(self, band=RATE_BAND) -> bool:
        return band[0] <= self.fitted_rate <= band[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dt", "err_sq_mean", "err_sq_se", "err_gap_sq_mean", "n_paths", "aborted"])
        for row in zip(self.step_sizes, self.err_sq_mean, self.err_sq_se, self.err_gap_sq_mean, self.n_paths, self.aborted):
            dt, m, se, g, n, a = row
            w.writerow(["%.17g" % dt, "%.17g" % m, "%.17g" % se, "%.17g" % g, n, a])
        return buf.getvalue()

    def summary(self) -> dict:
        out = dict(self.meta)
        out.update(
            fitted_rate=self.fitted_rate,
            fitted_intercept=self.fitted_intercept,
            gap_fitted_rate=self.gap_fitted_rate,
            gap_fitted_intercept=self.gap_fitted_intercept,
            rate_band=list(RATE_BAND),
            in_band=self.in_band(),
        )
        return out


@dataclass(frozen=True)
class _StrongTask:
    spec: SystemSpec
    kind: SchemeKind
    seed: int
    paths: range
    n_fine: int
    factors: tuple
    ref_factor: int
    eps_alpha: float
    eps_den: float


def _strong_chunk(task: _StrongTask):
    spec = task.spec
    T = spec.horizon
    dW = generate_batch(task.seed, task.paths, spec.d, task.n_fine, T)
    dt_f = T / task.n_fine
    kw = dict(eps_alpha=task.eps_alpha, eps_den=task.eps_den)
    ref = simulate(spec, coarsen_increments(dW, task.ref_factor), dt_f * task.ref_factor, task.kind, **kw)
    m = len(task.paths)
    err = np.full((m, len(task.factors)), np.nan)
    gap_err = np.full_like(err, np.nan)
    for col, f in enumerate(task.factors):
        b = simulate(spec, coarsen_increments(dW, f), dt_f * f, task.kind, **kw)
        stride = f // task.ref_factor
        ok = ~b.aborted & ~ref.aborted
        with np.errstate(all="ignore"):
            diff = b.positions - ref.positions[:, ::stride]
            err[ok, col] = np.max(np.sum(diff * diff, axis=-1), axis=-1)[ok]
            if b.gaps_aux is not None:
                sl = difference_gaps(spec.d)
                gd = b.gaps_aux[..., sl] - ref.gaps_aux[:, ::stride, sl]
                gap_err[ok, col] = np.max(np.max(gd * gd, axis=-1), axis=-1)[ok]
    return err, gap_err


def strong_error(
    spec: SystemSpec,
    kind=DEFAULT_SCHEME,
    seed: int = 0,
    M: int = 1000,
    factors=(16, 32, 64, 128, 256),
    ref_factor: int = 1,
    n_fine: int = 4096,
    workers: int | None = None,
    eps_alpha: float = EPS_ALPHA,
    eps_den: float = EPS_DEN,
) -> ConvergenceTable:
    """Pathwise error of ``kind`` at each coarse factor against the same scheme at ``ref_factor``.

    Per path the error is ``max_n |Y_n - Y_ref(t_n)|^2`` over the coarse grid;
    the gap column uses ``max_{n,i}`` of the squared auxiliary-gap difference
    over the particle differences ``i >= 1``.
    Paths where either run aborted are left out of that row and counted.
    """
    kind = SchemeKind(kind)
    factors = tuple(sorted({int(f) for f in factors}, reverse=True))
    _check_plan(n_fine, factors, ref_factor, M)
    tasks = [
        _StrongTask(spec, kind, seed, r, n_fine, factors, ref_factor, eps_alpha, eps_den)
        for r in _chunks(M)
    ]
    parts = _map(_strong_chunk, tasks, workers)
    err = np.concatenate([p[0] for p in parts])
    gap = np.concatenate([p[1] for p in parts])
    dts = [spec.horizon * f / n_fine for f in factors]
    means, ses, gmeans, gses, counts, aborted = [], [], [], [], [], []
    for col in range(len(factors)):
        m, se, n = _mean_se(err[:, col])
        gm, gse, _ = _mean_se(gap[:, col])
        means.append(m)
        ses.append(se)
        gmeans.append(gm)
        gses.append(gse)
        counts.append(n)
        aborted.append(M - n)
    rate, icpt = fit_rate(dts, means)
    grate, gicpt = fit_rate(dts, gmeans)
    meta = {
        "scheme": kind.value,
        "seed": seed,
        "paths": M,
        "n_fine": n_fine,
        "factors": list(factors),
        "ref_factor": ref_factor,
        "spec_sha256": spec.content_hash(),
    }
    return ConvergenceTable(dts, means, ses, gmeans, gses, counts, aborted, rate, icpt, grate, gicpt, meta)


# ---------------------------------------------------------------- local error


@dataclass
class LocalErrorTable:
    step_sizes: list
    sup_mean_sq_increment: list
    fitted_rate: float
    fitted_intercept: float


def _local_chunk(task: _StrongTask):
    spec = task.spec
    T = spec.horizon
    dW = generate_batch(task.seed, task.paths, spec.d, task.n_fine, T)
    out = []
    for f in task.factors:
        b = simulate(spec, coarsen_increments(dW, f), T * f / task.n_fine, task.kind, eps_alpha=task.eps_alpha, eps_den=task.eps_den)
        out.append(b.increments)
    return out


def local_error_scaling(
    spec: SystemSpec,
    seed: int = 0,
    M: int = 1000,
    factors=(16, 32, 64, 128, 256),
    n_fine: int = 4096,
    kind=DEFAULT_SCHEME,
    workers: int | None = None,
    eps_alpha: float = EPS_ALPHA,
    eps_den: float = EPS_DEN,
) -> LocalErrorTable:
    """Size of one-step auxiliary increments versus step size.

    For each step ``n`` the Monte Carlo mean of ``max_i |aux_{n+1} - aux_n|^2``
    is formed; the table reports the supremum of that mean over steps.
    """
    kind = SchemeKind(kind)
    if not kind.is_sd:
        raise ValueError("local error scaling needs a splitting scheme")
    factors = tuple(sorted({int(f) for f in factors}, reverse=True))
    _check_plan(n_fine, factors, None, M)
    tasks = [_StrongTask(spec, kind, seed, r, n_fine, factors, 1, eps_alpha, eps_den) for r in _chunks(M)]
    parts = _map(_local_chunk, tasks, workers)
    dts, sups = [], []
    for col, f in enumerate(factors):
        inc = np.concatenate([p[col] for p in parts])
        per_step = np.nanmean(inc, axis=0)
        dts.append(spec.horizon * f / n_fine)
        sups.append(float(np.max(per_step)))
    rate, icpt = fit_rate(dts, sups)
    return LocalErrorTable(dts, sups, rate, icpt)


# ---------------------------------------------------------------- collisions


@dataclass
class CollisionStats:
    scheme: str
    min_gap: float
    violation_steps: int
    aborted_paths: int
    n_paths: int


def _collision_chunk(task: _StrongTask):
    spec = task.spec
    T = spec.horizon
    dW = generate_batch(task.seed, task.paths, spec.d, task.n_fine, T)
    f = task.factors[0]
    b = simulate(spec, coarsen_increments(dW, f), T * f / task.n_fine, task.kind, eps_alpha=task.eps_alpha, eps_den=task.eps_den)
    with np.errstate(invalid="ignore"):
        gaps = np.diff(b.positions[:, 1:], axis=-1)
    min_gap = float(np.nanmin(gaps)) if np.isfinite(gaps).any() else math.inf
    return min_gap, int(b.violation_steps.sum()), int(b.aborted.sum())


def collision_stats(
    spec: SystemSpec,
    kind=DEFAULT_SCHEME,
    seed: int = 0,
    M: int = 1000,
    factor: int = 1,
    n_fine: int = 4096,
    workers: int | None = None,
    eps_alpha: float = EPS_ALPHA,
    eps_den: float = EPS_DEN,
) -> CollisionStats:
    """Smallest adjacent gap seen at grid times ``t_n, n >= 1``, ordering-violation steps and aborted paths."""
    kind = SchemeKind(kind)
    _check_plan(n_fine, (factor,), None, M)
    tasks = [_StrongTask(spec, kind, seed, r, n_fine, (factor,), 1, eps_alpha, eps_den) for r in _chunks(M)]
    parts = _map(_collision_chunk, tasks, workers)
    return CollisionStats(
        scheme=kind.value,
        min_gap=min(p[0] for p in parts),
        violation_steps=sum(p[1] for p in parts),
        aborted_paths=sum(p[2] for p in parts),
        n_paths=M,
    )


def collisions_to_csv(rows, meta=None) -> str:
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scheme", "min_gap", "violation_steps", "aborted_paths", "n_paths"])
    for r in rows:
        w.writerow([r.scheme, "%.17g" % r.min_gap, r.violation_steps, r.aborted_paths, r.n_paths])
    return buf.getvalue()


@dataclass
class OrderingAudit:
    scheme: str
    n_paths: int
    factors: list
    violation_steps: int
    floor_failures: int
    aborted_paths: int
    min_floor_slack: float

    def passed(self) -> bool:
        return self.violation_steps == 0 and self.floor_failures == 0


def _audit_chunk(task: _StrongTask):
    spec = task.spec
    T = spec.horizon
    dW = generate_batch(task.seed, task.paths, spec.d, task.n_fine, T)
    gamma_adj = np.array([spec.gamma[i, i + 1] for i in range(spec.d - 1)])
    viol = floor_fail = aborted = 0
    slack = math.inf
    for f in task.factors:
        dt = T * f / task.n_fine
        b = simulate(spec, coarsen_increments(dW, f), dt, task.kind, eps_alpha=task.eps_alpha, eps_den=task.eps_den)
        s = b.times[1:, None] if task.kind is SchemeKind.SD_COMPOSED else np.full((len(b.times) - 1, 1), dt)
        floor = 2.0 * np.sqrt(gamma_adj * s)
        gaps = b.gaps_pos[:, 1:, 1:]
        valid = np.isfinite(gaps)
        viol += int(b.violation_steps.sum())
        floor_fail += int(np.sum(valid & ~(gaps >= floor)))
        aborted += int(b.aborted.sum())
        if valid.any():
            slack = min(slack, float(np.min((gaps - floor)[valid])))
    return viol, floor_fail, aborted, slack


def ordering_audit(
    spec: SystemSpec,
    kind=DEFAULT_SCHEME,
    seed: int = 0,
    M: int = 500,
    factors=(1, 16, 32, 64, 128, 256),
    n_fine: int = 4096,
    workers: int | None = None,
    eps_alpha: float = EPS_ALPHA,
    eps_den: float = EPS_DEN,
) -> OrderingAudit:
    """Count ordering violations and breaches of the gap floor for a splitting scheme.

    The floor is ``2 sqrt(gamma_{i,i+1} t_n)`` for the composed scheme and
    ``2 sqrt(gamma_{i,i+1} dt)`` for the per-step scheme, checked at every
    ``n >= 1`` on every non-aborted path.
    """
    kind = SchemeKind(kind)
    if not kind.is_sd:
        raise ValueError("ordering audit needs a splitting scheme")
    factors = tuple(sorted({int(f) for f in factors}))
    _check_plan(n_fine, factors, None, M)
    tasks = [_StrongTask(spec, kind, seed, r, n_fine, factors, 1, eps_alpha, eps_den) for r in _chunks(M)]
    parts = _map(_audit_chunk, tasks, workers)
    return OrderingAudit(
        scheme=kind.value,
        n_paths=M,
        factors=list(factors),
        violation_steps=sum(p[0] for p in parts),
        floor_failures=sum(p[1] for p in parts),
        aborted_paths=sum(p[2] for p in parts),
        min_floor_slack=min(p[3] for p in parts),
    )


# ---------------------------------------------------------------- moments


@dataclass
class MomentReport:
    t_check: float
    n_paths: int
    aborted: int
    empirical_mean_sq_norm: float
    mean_sq_norm_se: float
    theoretical: float
    z_score: float
    sum_mean: float
    sum_mean_se: float
    sum_theoretical_mean: float
    sum_mean_z: float
    sum_var: float
    sum_var_se: float
    sum_theoretical_var: float
    sum_var_z: float
    meta: dict = field(default_factory=dict)

    def max_abs_z(self) -> float:
        return max(abs(self.z_score), abs(self.sum_mean_z), abs(self.sum_var_z))

    def passed(self, z_max: float = Z_MAX) -> bool:
        return self.max_abs_z() <= z_max

    def to_dict(self) -> dict:
        return asdict(self)


def dyson_moments(spec: SystemSpec, t: float) -> tuple[float, float, float]:
    """Closed-form ``E|X_t|^2``, ``E sum X_t`` and ``Var sum X_t`` for zero drift, constant gamma.

    Pairs contribute ``x_i/(x_i-x_j) + x_j/(x_j-x_i) = 1`` to the drift of
    ``|X|^2`` and cancel in the drift of ``sum X``.
    """
    d = spec.d
    gamma = spec.gamma[0, 1]
    sq = float(spec.x0 @ spec.x0 + (gamma * d * (d - 1) + np.sum(spec.sigma**2)) * t)
    mean = float(np.sum(spec.x0))
    var = float(t * np.sum(np.sum(spec.sigma, axis=0) ** 2))
    return sq, mean, var


@dataclass(frozen=True)
class _MomentTask:
    spec: SystemSpec
    kind: SchemeKind
    seed: int
    paths: range
    n_fine: int
    factor: int
    t_check: float


def _moment_chunk(task: _MomentTask):
    spec = task.spec
    dW = generate_batch(task.seed, task.paths, spec.d, task.n_fine, task.t_check)
    b = simulate(spec, coarsen_increments(dW, task.factor), task.t_check * task.factor / task.n_fine, task.kind)
    x = b.positions[:, -1]
    x[b.aborted] = np.nan
    return x


def dyson_moment_check(
    spec: SystemSpec,
    seed: int = 0,
    M: int = 10_000,
    t_check: float = 1.0,
    n_fine: int = 4096,
    factor: int = 1,
    kind=DEFAULT_SCHEME,
    workers: int | None = None,
) -> MomentReport:
    """Compare simulated moments at ``t_check`` with the closed-form Dyson values."""
    kind = SchemeKind(kind)
    if spec.drift.kind != ZERO or not spec.is_dyson():
        raise ValueError("moment check needs zero drift, constant gamma and diagonal sigma")
    if not t_check > 0:
        raise PlanError("t_check must be positive")
    _check_plan(n_fine, (factor,), None, M)
    tasks = [_MomentTask(spec, kind, seed, r, n_fine, factor, t_check) for r in _chunks(M)]
    x = np.concatenate(_map(_moment_chunk, tasks, workers))
    x = x[np.all(np.isfinite(x), axis=-1)]
    n = x.shape[0]
    sq_th, mean_th, var_th = dyson_moments(spec, t_check)

    nsq = np.sum(x * x, axis=-1)
    m_sq, se_sq, _ = _mean_se(nsq)
    s = np.sum(x, axis=-1)
    m_s, se_s, _ = _mean_se(s)
    centred = s - s.mean()
    var = float(np.mean(centred**2) * n / (n - 1))
    m4 = float(np.mean(centred**4))
    # delta-method standard error of the sample variance
    se_var = math.sqrt(max(m4 - var**2, 0.0) / n)

    return MomentReport(
        t_check=t_check,
        n_paths=M,
        aborted=M - n,
        empirical_mean_sq_norm=m_sq,
        mean_sq_norm_se=se_sq,
        theoretical=sq_th,
        z_score=(m_sq - sq_th) / se_sq,
        sum_mean=m_s,
        sum_mean_se=se_s,
        sum_theoretical_mean=mean_th,
        sum_mean_z=(m_s - mean_th) / se_s,
        sum_var=var,
        sum_var_se=se_var,
        sum_theoretical_var=var_th,
        sum_var_z=(var - var_th) / se_var,
        meta={
            "scheme": kind.value,
            "seed": seed,
            "n_fine": n_fine,
            "factor": factor,
            "spec_sha256": spec.content_hash(),
        },
    )
