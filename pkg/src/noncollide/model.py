"""System description for interacting particles with pairwise repulsion.

Each particle ``i`` (1-based in the maths, 0-based in arrays) follows

    dX_i = ( sum_{j != i} gamma_ij / (X_i - X_j) + b_i(X_i) ) dt + sum_j sigma_ij dW_j

started inside the ordered chamber ``x_1 < x_2 < ... < x_d``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ZERO = "zero"
AFFINE = "affine"


class ConfigError(ValueError):
    """Raised when a configuration cannot be turned into a SystemSpec."""


@dataclass(frozen=True)
class DriftSpec:
    """Drift family ``b_i(z) = a_i + k z`` with a shared slope ``k``.

    A shared slope and non-decreasing intercepts is what makes
    ``b_i(z) <= b_{i+1}(z)`` hold for every ``z``.
    """

    kind: str = ZERO
    slope: float = 0.0
    intercepts: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in (ZERO, AFFINE):
            raise ConfigError(f"unknown drift kind {self.kind!r}")
        object.__setattr__(self, "intercepts", tuple(float(a) for a in self.intercepts))

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.kind == ZERO else abs(self.slope)

    def is_ordered(self) -> bool:
        if self.kind == ZERO:
            return True
        a = self.intercepts
        return all(a[i] <= a[i + 1] for i in range(len(a) - 1))

    def values(self, z):
        """Evaluate every ``b_i`` at the matching column of ``z`` (shape ``(..., d)``)."""
        z = np.asarray(z, dtype=float)
        if self.kind == ZERO:
            return np.zeros_like(z)
        return np.asarray(self.intercepts) + self.slope * z


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Immutable description of the particle system.

    Parameters
    ----------
    gamma : (d, d) array
        Interaction strengths. Diagonal entries are ignored.
    drift : DriftSpec
    sigma : (d, d) array
        Constant diffusion matrix, row ``i`` drives particle ``i``.
    x0 : (d,) array
        Initial positions.
    horizon : float
        Final time ``T``.
    """

    gamma: np.ndarray
    drift: DriftSpec
    sigma: np.ndarray
    x0: np.ndarray
    horizon: float = 1.0

    def __post_init__(self):
        for name in ("gamma", "sigma", "x0"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        d = self.x0.shape[0] if self.x0.ndim == 1 else -1
        if d < 2:
            raise ConfigError("x0 must be a vector with at least 2 entries")
        if self.gamma.shape != (d, d) or self.sigma.shape != (d, d):
            raise ConfigError(f"gamma and sigma must be {d}x{d} matrices")
        if self.drift.kind == AFFINE and len(self.drift.intercepts) != d:
            raise ConfigError(f"affine drift needs {d} intercepts")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be a positive finite number")

    @property
    def d(self) -> int:
        return self.x0.shape[0]

    def is_dyson(self) -> bool:
        """Constant off-diagonal gamma and diagonal sigma."""
        off = ~np.eye(self.d, dtype=bool)
        g = self.gamma[off]
        sig_off = self.sigma[off]
        return bool(np.all(g == g[0]) and np.all(sig_off == 0.0))

    def to_dict(self) -> dict:
        drift = {"kind": self.drift.kind}
        if self.drift.kind == AFFINE:
            drift.update(slope=self.drift.slope, intercepts=list(self.drift.intercepts))
        return {
            "d": self.d,
            "gamma": {"kind": "matrix", "value": self.gamma.tolist()},
            "sigma": {"kind": "matrix", "value": self.sigma.tolist()},
            "drift": drift,
            "x0": self.x0.tolist(),
            "horizon": self.horizon,
        }

    def content_hash(self) -> str:
        """SHA-256 of the canonical JSON form (expanded matrices)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def dyson(d: int, gamma: float = 1.0, sigma: float = 1.0, x0=None, horizon: float = 1.0) -> SystemSpec:
    """Dyson-type system: constant gamma, ``sigma * I``, zero drift.

    ``x0`` defaults to ``d`` equally spaced points with unit spacing, centred at 0.
    """
    if x0 is None:
        x0 = np.arange(d, dtype=float) - (d - 1) / 2.0
    g = np.full((d, d), float(gamma))
    np.fill_diagonal(g, 0.0)
    return SystemSpec(g, DriftSpec(), sigma * np.eye(d), np.asarray(x0, float), horizon)


def drift_eval(spec: SystemSpec, i: int, z: float) -> float:
    """Evaluate ``b_i(z)`` with 1-based particle index ``i``."""
    if not 1 <= i <= spec.d:
        raise IndexError(f"particle index {i} outside 1..{spec.d}")
    if spec.drift.kind == ZERO:
        return 0.0
    return spec.drift.intercepts[i - 1] + spec.drift.slope * z


def noise_scales(sigma: np.ndarray) -> np.ndarray:
    """Euclidean distance between consecutive rows of ``sigma`` (row 0 of a zero row prepended)."""
    sigma = np.asarray(sigma, dtype=float)
    ext = np.vstack([np.zeros(sigma.shape[1]), sigma])
    return np.sqrt(np.sum((ext[1:] - ext[:-1]) ** 2, axis=1))


@dataclass
class ValidationReport:
    ok: bool
    violations: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[tuple[str, str]] = field(default_factory=list)
    sigma_sq: float = 0.0
    c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma_sup: float = 0.0

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [list(v) for v in self.violations],
            "warnings": [list(w) for w in self.warnings],
            "derived": {
                "sigma_sq": self.sigma_sq,
                "c": self.c.tolist(),
                "gamma_sup": self.gamma_sup,
            },
        }


def validate(spec: SystemSpec, strict: bool = False) -> ValidationReport:
    """Check well-posedness conditions and the convergence hypotheses.

    Ordering of ``x0``, symmetry/sign of ``gamma`` and drift ordering are always
    violations. The noise bound ``sigma^2 <= 2 min_i gamma_{i,i+1}`` and
    ``c_i^2 >= (d-1) sup gamma`` are violations only when ``strict`` is set and
    warnings otherwise.
    """
    d = spec.d
    g = spec.gamma
    violations: list[tuple[str, str]] = []
    soft: list[tuple[str, str]] = []

    if not np.all(np.isfinite(spec.x0)):
        violations.append(("x0-finite", "x0 has non-finite entries"))
    elif not np.all(np.diff(spec.x0) > 0):
        violations.append(("x0-order", "x0 not strictly increasing"))

    off = ~np.eye(d, dtype=bool)
    if not np.array_equal(g[off], g.T[off]):
        violations.append(("gamma-symmetric", "gamma is not symmetric off the diagonal"))
    if np.any(g[off] < 0):
        violations.append(("gamma-nonnegative", "gamma has negative off-diagonal entries"))
    superdiag = np.array([g[i, i + 1] for i in range(d - 1)])
    if np.any(superdiag <= 0):
        bad = [i + 1 for i in range(d - 1) if superdiag[i] <= 0]
        violations.append(("gamma-adjacent", f"gamma[i][i+1] must be > 0, fails at i={bad}"))

    if not spec.drift.is_ordered():
        violations.append(("drift-order", "drift intercepts must be non-decreasing"))
    if not np.all(np.isfinite(spec.sigma)):
        violations.append(("sigma-finite", "sigma has non-finite entries"))

    sigma_sq = float(np.max(np.sum(spec.sigma**2, axis=1)))
    c = noise_scales(spec.sigma)
    gamma_sup = float(np.max(g[off]))

    bound = 2.0 * float(np.min(superdiag))
    if sigma_sq > bound:
        soft.append(
            (
                "noise-bound",
                f"sigma^2 = {sigma_sq:.6g} exceeds 2*min_i gamma[i][i+1] = {bound:.6g} "
                "(bound read over adjacent pairs only)",
            )
        )
    need = (d - 1) * gamma_sup
    low = [i for i in range(d) if c[i] ** 2 < need]
    if low:
        soft.append(
            (
                "noise-floor",
                f"c_i^2 < (d-1)*sup gamma = {need:.6g} for gap indices {low}",
            )
        )

    if strict:
        violations.extend(soft)
        soft = []
    return ValidationReport(
        ok=not violations,
        violations=violations,
        warnings=soft,
        sigma_sq=sigma_sq,
        c=c,
        gamma_sup=gamma_sup,
    )


def _expand(entry, d: int, name: str, default_kind: str) -> np.ndarray:
    if isinstance(entry, (int, float)):
        entry = {"kind": "scalar" if name == "gamma" else "diag", "value": entry}
    if not isinstance(entry, dict) or "value" not in entry:
        raise ConfigError(f"{name}: expected an object with 'kind' and 'value'")
    kind = entry.get("kind", default_kind)
    value = entry["value"]
    try:
        if kind == "scalar":
            m = np.full((d, d), float(value))
            np.fill_diagonal(m, 0.0)
        elif kind == "identity":
            scale = 1.0 if value is None else float(value)
            m = scale * np.eye(d)
        elif kind == "diag":
            v = np.broadcast_to(np.asarray(value, dtype=float), (d,))
            m = np.diag(v)
        elif kind == "matrix":
            m = np.asarray(value, dtype=float)
            if m.shape != (d, d):
                raise ConfigError(f"{name}: matrix must be {d}x{d}, got {m.shape}")
        else:
            raise ConfigError(f"{name}: unknown kind {kind!r}")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: {exc}") from exc
    return m


def spec_from_dict(cfg: dict) -> SystemSpec:
    """Build a SystemSpec from the JSON configuration schema."""
    try:
        d = int(cfg["d"])
        x0 = np.asarray(cfg["x0"], dtype=float)
        horizon = float(cfg.get("horizon", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    if x0.shape != (d,):
        raise ConfigError(f"x0 must have {d} entries")
    gamma = _expand(cfg.get("gamma", {"kind": "scalar", "value": 1.0}), d, "gamma", "scalar")
    sigma = _expand(cfg.get("sigma", {"kind": "identity", "value": 1.0}), d, "sigma", "identity")
    dcfg = cfg.get("drift", {"kind": ZERO})
    kind = dcfg.get("kind", ZERO)
    if kind == AFFINE:
        drift = DriftSpec(AFFINE, float(dcfg.get("slope", 0.0)), tuple(dcfg.get("intercepts", ())))
    else:
        drift = DriftSpec(kind)
    return SystemSpec(gamma, drift, sigma, x0, horizon)


def load_spec(path) -> SystemSpec:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return spec_from_dict(cfg)
