"""Reproducible Wiener increments on a dyadic grid.

Increments for one path come from a Philox counter-based generator keyed by
``(seed, path_id)``; the draw for step ``n`` and component ``j`` sits at counter
position ``n * d + j``, so any path can be regenerated on its own, in any order
and on any worker. Normals use the inverse CDF of the uniform output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

MAGIC = b"NCSBROWN"
_HEADER = struct.Struct("<8sQqqqd")
_MASK64 = (1 << 64) - 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check(d: int, n_fine: int, T: float):
    if not _is_pow2(int(n_fine)):
        raise ValueError(f"n_fine must be a power of two, got {n_fine}")
    if not T > 0:
        raise ValueError(f"T must be positive, got {T}")
    if d < 1:
        raise ValueError("d must be >= 1")


def _standard_normals(seed: int, path_id: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=[seed & _MASK64, path_id & _MASK64])
    raw = bitgen.random_raw(count)
    # 53-bit midpoint uniforms lie strictly inside (0, 1)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


@dataclass(frozen=True, eq=False)
class BrownianGrid:
    seed: int
    path_id: int
    d: int
    n_fine: int
    T: float
    increments: np.ndarray

    @property
    def dt_fine(self) -> float:
        return self.T / self.n_fine

    def dump(self, path) -> None:
        """Write the little-endian audit format: 48-byte header then row-major float64."""
        header = _HEADER.pack(MAGIC, self.seed & _MASK64, self.path_id, self.d, self.n_fine, self.T)
        body = np.ascontiguousarray(self.increments, dtype="<f8").tobytes()
        Path(path).write_bytes(header + body)


def generate(seed: int, path_id: int, d: int, n_fine: int, T: float) -> BrownianGrid:
    """Increments ``(n_fine, d)``, i.i.d. ``N(0, T / n_fine)``."""
    _check(d, n_fine, T)
    z = _standard_normals(seed, path_id, n_fine * d).reshape(n_fine, d)
    inc = z * np.sqrt(T / n_fine)
    inc.setflags(write=False)
    return BrownianGrid(int(seed), int(path_id), int(d), int(n_fine), float(T), inc)


def generate_batch(seed: int, path_ids, d: int, n_fine: int, T: float) -> np.ndarray:
    """Stacked increments ``(len(path_ids), n_fine, d)``; row ``m`` equals ``generate(seed, path_ids[m], ...)``."""
    _check(d, n_fine, T)
    path_ids = list(path_ids)
    out = np.empty((len(path_ids), n_fine, d))
    scale = np.sqrt(T / n_fine)
    for m, pid in enumerate(path_ids):
        out[m] = _standard_normals(seed, pid, n_fine * d).reshape(n_fine, d) * scale
    return out


def coarsen_increments(inc: np.ndarray, factor: int) -> np.ndarray:
    """Block sums over ``factor`` consecutive steps along axis ``-2``.

    Blocks are summed as a balanced binary tree of adjacent pairs, so
    coarsening by ``2f`` is bitwise equal to coarsening by 2 and then by ``f``.
    """
    factor = int(factor)
    n = inc.shape[-2]
    if not _is_pow2(factor):
        raise ValueError(f"factor must be a power of two, got {factor}")
    if n % factor:
        raise ValueError(f"factor {factor} does not divide {n} steps")
    out = np.asarray(inc, dtype=float)
    while factor > 1:
        out = out[..., 0::2, :] + out[..., 1::2, :]
        factor //= 2
    return np.array(out)


def coarsen(grid: BrownianGrid, factor: int) -> np.ndarray:
    return coarsen_increments(grid.increments, factor)


def load(path) -> BrownianGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("file too short for a Brownian grid header")
    magic, seed, path_id, d, n_fine, T = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("bad magic, not a Brownian grid dump")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != n_fine * d:
        raise ValueError(f"expected {n_fine * d} values, found {body.size}")
    inc = body.astype(np.float64).reshape(n_fine, d)
    inc.setflags(write=False)
    return BrownianGrid(seed, path_id, d, n_fine, T, inc)
