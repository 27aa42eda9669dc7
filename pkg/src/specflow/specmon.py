"""Monotone spectral enumerations on finite index windows.

A two-sided discrete spectrum is stored as a nondecreasing array together
with the logical index of its first entry.  Logical index 0 is the first
nonnegative eigenvalue, so a kernel of dimension ``m`` occupies indices
``0 .. m-1`` and index ``-1`` carries the largest negative eigenvalue.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class IncomparableWindowsError(ValueError):
    """Two windows share no logical index."""


class EnumerationError(ValueError):
    """Eigenvalues cannot be enumerated with the sign convention."""


@dataclass(frozen=True)
class SpectralWindow:
    values: np.ndarray
    j_min: int
    zero_count: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if vals.size == 0:
            raise EnumerationError("empty window")
        if np.any(np.diff(vals) < 0):
            raise EnumerationError("window values must be nondecreasing")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "j_min", int(self.j_min))

    @property
    def j_max(self) -> int:
        return self.j_min + self.values.size - 1

    def __len__(self) -> int:
        return self.values.size

    def __contains__(self, j: int) -> bool:
        return self.j_min <= j <= self.j_max

    def __call__(self, j: int) -> float:
        if j not in self:
            raise IndexError(f"logical index {j} outside [{self.j_min}, {self.j_max}]")
        return float(self.values[j - self.j_min])

    def __eq__(self, other):
        if not isinstance(other, SpectralWindow):
            return NotImplemented
        return self.j_min == other.j_min and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.j_min, self.values.tobytes()))

    def indices(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    def take(self, j_lo: int, j_hi: int) -> np.ndarray:
        """Values at logical indices ``j_lo..j_hi`` inclusive."""
        if j_lo not in self or j_hi not in self:
            raise IndexError(f"range [{j_lo}, {j_hi}] not covered by window")
        return self.values[j_lo - self.j_min: j_hi - self.j_min + 1]

    def restrict(self, j_lo: int, j_hi: int) -> "SpectralWindow":
        zeros = max(0, min(j_hi, self.zero_count - 1) - max(j_lo, 0) + 1)
        return SpectralWindow(self.take(j_lo, j_hi), j_lo, zeros)

    def interior(self, fraction: float = 0.25) -> tuple[int, int]:
        """Logical index range left after dropping ``fraction`` of the entries at each end."""
        n = len(self)
        cut = int(np.floor(fraction * n))
        return self.j_min + cut, self.j_max - cut

    def rows(self) -> Iterator[tuple[int, float, float]]:
        """(logical index, value, arsinh(value)) records, one per entry."""
        for j, lam in zip(self.indices(), self.values):
            yield int(j), float(lam), float(np.arcsinh(lam))


def align_enumeration(eigs: Sequence[float], zero_tol: float | None = None,
                      require_negative: bool = False) -> SpectralWindow:
    """Attach logical indices to a sorted eigenvalue list.

    Entries with ``|lam| <= zero_tol`` are snapped to 0 and receive indices
    ``0..m-1``; the last negative entry receives index -1.  ``zero_tol``
    defaults to ``1e-9`` times the largest magnitude in ``eigs``.
    """
    vals = np.asarray(eigs, dtype=float).reshape(-1)
    if vals.size == 0:
        raise EnumerationError("no eigenvalues")
    if np.any(np.diff(vals) < 0):
        raise EnumerationError("eigenvalues must be sorted nondecreasingly")
    if zero_tol is None:
        zero_tol = 1e-9 * float(np.max(np.abs(vals)))
    vals = vals.copy()
    zero = np.abs(vals) <= zero_tol
    vals[zero] = 0.0
    n_neg = int(np.count_nonzero(vals < 0))
    if require_negative and n_neg == 0:
        raise EnumerationError("window has no negative entry, index -1 cannot be certified")
    return SpectralWindow(vals, -n_neg, int(np.count_nonzero(zero)))


def shift(u: SpectralWindow, k: int) -> SpectralWindow:
    """The shifted enumeration j -> u(j + k)."""
    return SpectralWindow(u.values, u.j_min - int(k), u.zero_count)


def _common_range(u: SpectralWindow, v: SpectralWindow) -> tuple[int, int]:
    lo, hi = max(u.j_min, v.j_min), min(u.j_max, v.j_max)
    if lo > hi:
        raise IncomparableWindowsError(
            f"windows [{u.j_min}, {u.j_max}] and [{v.j_min}, {v.j_max}] do not overlap")
    return lo, hi


def arsinh_gaps(u: SpectralWindow, v: SpectralWindow) -> tuple[np.ndarray, np.ndarray]:
    """Common logical indices and |arsinh u(j) - arsinh v(j)| on them."""
    lo, hi = _common_range(u, v)
    gaps = np.abs(np.arcsinh(u.take(lo, hi)) - np.arcsinh(v.take(lo, hi)))
    return np.arange(lo, hi + 1), gaps


def arsinh_dist(u: SpectralWindow, v: SpectralWindow) -> float:
    return float(np.max(arsinh_gaps(u, v)[1]))


def best_shift(u: SpectralWindow, v: SpectralWindow, max_shift: int) -> tuple[int, float]:
    """Shift k with |k| <= max_shift minimising arsinh_dist(u, shift(v, k)).

    Ties go to the smallest |k|, then to the negative shift.
    """
    if max_shift < 0:
        raise ValueError("max_shift must be nonnegative")
    best = None
    for k in sorted(range(-max_shift, max_shift + 1), key=lambda k: (abs(k), k)):
        try:
            d = arsinh_dist(u, shift(v, k))
        except IncomparableWindowsError as exc:
            raise IncomparableWindowsError(f"shift {k} exhausts window overlap") from exc
        if best is None or d < best[1]:
            best = (k, d)
    return best


def quotient_dist(u: SpectralWindow, v: SpectralWindow, max_shift: int) -> float:
    return best_shift(u, v, max_shift)[1]


@dataclass(frozen=True)
class SortingReport:
    hypothesis: bool
    conclusion: bool
    matched_gap: float
    sorted_gap: float

    @property
    def consistent(self) -> bool:
        return self.conclusion or not self.hypothesis


def sorting_stability_check(a, b, sigma, delta: float, transform=None) -> SortingReport:
    """Check that a delta-matching under ``sigma`` survives sorting.

    ``transform`` (e.g. ``np.arcsinh``) is applied to both sequences first.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    sigma = np.asarray(sigma, dtype=int)
    if a.shape != b.shape or a.shape != sigma.shape:
        raise ValueError("a, b and sigma must have equal lengths")
    if sorted(sigma.tolist()) != list(range(a.size)):
        raise ValueError("sigma is not a permutation")
    if np.any(np.diff(a) < 0) or np.any(np.diff(b) < 0):
        raise ValueError("a and b must be nondecreasing")
    if transform is not None:
        a, b = transform(a), transform(b)
    matched = float(np.max(np.abs(a - b[sigma]))) if a.size else 0.0
    direct = float(np.max(np.abs(a - b))) if a.size else 0.0
    return SortingReport(matched <= delta, direct <= delta, matched, direct)
