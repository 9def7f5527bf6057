"""Whittle-index machinery for the per-monitor scheduling sub-problem.

Each monitoring device, taken alone, is a two-action restless bandit: its state
is the AoII x (slots since the controller's prediction was last right), the
actions are transmit / stay idle, and a transmission is charged an extra cost C
on top of the weighted age w*x. Under a threshold policy (transmit iff
x >= x0) the chain has a closed-form stationary distribution with geometric
pieces below and above the threshold, which gives a closed-form long-run
average cost f(x0, C). The Whittle index of an age x is the charge C at which
thresholds x and x+1 become equally good, found here on an explicit cost grid
exactly the way a table would be generated offline before training.

All functions are pure; a built table is safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IndexSearchError, ThresholdCapError, TruncationError
from .model import ProcessModel

__all__ = [
    "SubProblem",
    "ThresholdPolicy",
    "SearchGrid",
    "IndexColumn",
    "WhittleTable",
    "stationary_distribution",
    "tail_mass",
    "average_cost",
    "optimal_threshold",
    "whittle_index",
    "bisect_index",
    "verify_indexability",
    "build_table",
    "save_table",
    "load_table",
    "simulate_threshold_policy",
]

TABLE_FORMAT = "wisched-whittle-table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class SubProblem:
    """Decoupled single-monitor problem: p is the resync/self-correct
    probability, q the spontaneous flip-back probability of a wrong
    prediction, w the per-slot weight on the age."""

    p: float
    q: float
    w: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.q < 1.0:
            raise ValueError(f"q must lie in (0, 1), got {self.q}")
        if self.w < 0.0:
            raise ValueError(f"w must be non-negative, got {self.w}")

    @staticmethod
    def from_process(pm: ProcessModel) -> "SubProblem":
        return SubProblem(p=pm.self_prob, q=pm.flip_back_prob, w=pm.weight)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Transmit exactly when the age is at or above ``threshold`` (>= 1)."""

    threshold: int

    def __post_init__(self) -> None:
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")

    def transmit(self, x: int) -> bool:
        return x >= self.threshold


@dataclass(frozen=True)
class SearchGrid:
    """Cost grid {c_low, c_low+dc, .., c_high} for the index search."""

    dc: float = 0.1
    c_low: float = 0.1
    c_high: float = 4000.0

    def __post_init__(self) -> None:
        if self.dc <= 0.0:
            raise ValueError("dc must be positive")
        if self.c_low >= self.c_high:
            raise ValueError("c_low must be below c_high")

    @property
    def size(self) -> int:
        # last integer k with c_low + k*dc <= c_high (tolerating fp droop)
        return int(np.floor((self.c_high - self.c_low) / self.dc + 1e-9)) + 1

    def point(self, k: int) -> float:
        return self.c_low + k * self.dc


def _occupancy_root(sp: SubProblem, x0: int) -> float:
    """Stationary probability of age 0 under the threshold-x0 policy."""
    p, q = sp.p, sp.q
    return 1.0 / (1.0 + (1.0 - p) / q - (1.0 - p) * (1.0 / q - 1.0 / p) * (1.0 - q) ** (x0 - 1))


def _tail_beyond(sp: SubProblem, x0: int, x_max: int) -> float:
    """Exact stationary mass strictly beyond x_max (x_max >= x0)."""
    p, q = sp.p, sp.q
    mu0 = _occupancy_root(sp, x0)
    return (1.0 - q) ** (x0 - 1) * mu0 * (1.0 - p) ** (x_max - x0 + 2) / p


def stationary_distribution(sp: SubProblem, x0: int, x_max: int | None = None) -> np.ndarray:
    """Stationary occupancy of ages 0..x_max under the threshold-x0 policy.

    Below the threshold a wrong prediction survives with probability 1-q per
    slot, above it with 1-p, so the distribution is geometric on both sides of
    x0. The returned vector holds the exact per-state values (not
    renormalized). With an explicit x_max, a truncated tail above 1e-9 raises
    TruncationError; with x_max=None the vector is sized so the tail is below
    1e-12.
    """
    if x0 < 1:
        raise ValueError("threshold must be >= 1")
    p, q = sp.p, sp.q
    if x_max is None:
        # (1-p)-geometric decay beyond the threshold; size for a 1e-12 tail
        need = int(np.ceil(np.log(1e-12) / np.log(1.0 - p))) + 2
        x_max = x0 + max(need, 8)
    elif _tail_beyond(sp, x0, max(x_max, x0)) > 1e-9 or x_max < x0:
        tail = _tail_beyond(sp, x0, max(x_max, x0)) if x_max >= x0 else float("nan")
        raise TruncationError(
            f"truncated tail beyond x_max={x_max} is {tail:.3e} (> 1e-9); raise x_max"
        )
    mu0 = _occupancy_root(sp, x0)
    mu = np.empty(x_max + 1)
    mu[0] = mu0
    top = min(x0, x_max)
    xs_below = np.arange(1, top + 1)
    mu[1 : top + 1] = (1.0 - p) * (1.0 - q) ** (xs_below - 1.0) * mu0
    if x_max > x0:
        xs_above = np.arange(x0 + 1, x_max + 1)
        mu[x0 + 1 :] = (1.0 - p) ** (xs_above - x0 + 1.0) * (1.0 - q) ** (x0 - 1.0) * mu0
    return mu


def tail_mass(sp: SubProblem, x0: int) -> float:
    """Stationary probability of the transmit set {x >= x0} under the
    threshold-x0 policy, i.e. the long-run transmission rate.

    Closed form from the geometric tails: sum_{x>=x0} mu_x =
    (1-q)^(x0-1) * mu_0 * (1-p)/p, written with mu_0 expanded so the
    denominator carries the policy dependence.
    """
    if x0 < 1:
        raise ValueError("threshold must be >= 1")
    p, q = sp.p, sp.q
    return (1.0 - p) / (
        p * ((1.0 + (1.0 - p) / q) / (1.0 - q) ** (x0 - 1) - (1.0 - p) * (1.0 / q - 1.0 / p))
    )


def average_cost(sp: SubProblem, x0: int, c: float, method: str = "closed") -> float:
    """Long-run average cost of the threshold-x0 policy when each slot pays
    w*x and each transmission pays an extra c.

    ``method="closed"`` evaluates the rational closed form; ``method="sum"``
    recomputes the same value by summing the truncated stationary distribution
    (the two must agree to about 1e-8 relative, which the tests pin).
    """
    if x0 < 1:
        raise ValueError("threshold must be >= 1")
    p, q, w = sp.p, sp.q, sp.w
    if method == "closed":
        b1 = w * (1.0 - p) / q**2
        b2 = (
            w * (1.0 - p) ** 2 / (p**2 * (1.0 - q))
            - w * (1.0 - p) / q**2
            + c * (1.0 - p) / (p * (1.0 - q))
        )
        b3 = w * ((1.0 - p) / (1.0 - q)) * (1.0 / p - 1.0 / q)
        b4 = 1.0 + (1.0 - p) / q
        b5 = (1.0 - p) * (1.0 / q - 1.0 / p)
        return (b1 + (b2 + b3 * x0) * (1.0 - q) ** x0) / (b4 - b5 * (1.0 - q) ** (x0 - 1))
    if method == "sum":
        # grow the truncation until the neglected cost is provably negligible
        x_max = x0 + 64
        while True:
            tail = _tail_beyond(sp, x0, x_max)
            # ages beyond x_max contribute at most w*(x_max + 1 + 1/p) + c each
            bound = tail * (w * (x_max + 1.0 + 1.0 / p) + c)
            mu = stationary_distribution(sp, x0, x_max)
            partial = float(w * (np.arange(x_max + 1) * mu).sum() + c * mu[x0:].sum())
            if bound <= 1e-11 * max(1.0, abs(partial)):
                return partial
            x_max *= 2
    raise ValueError(f"unknown method {method!r}")


def optimal_threshold(sp: SubProblem, c: float, x0_max: int = 2000) -> int:
    """Best threshold in {1, .., x0_max} for transmission charge c (ties go to
    the smaller threshold). Hitting the cap raises ThresholdCapError, since the
    true argmin may lie beyond it."""
    if c < 0.0:
        raise ValueError("c must be non-negative")
    xs = np.arange(1, x0_max + 1)
    p, q, w = sp.p, sp.q, sp.w
    b1 = w * (1.0 - p) / q**2
    b2 = (
        w * (1.0 - p) ** 2 / (p**2 * (1.0 - q))
        - w * (1.0 - p) / q**2
        + c * (1.0 - p) / (p * (1.0 - q))
    )
    b3 = w * ((1.0 - p) / (1.0 - q)) * (1.0 / p - 1.0 / q)
    b4 = 1.0 + (1.0 - p) / q
    b5 = (1.0 - p) * (1.0 / q - 1.0 / p)
    f = (b1 + (b2 + b3 * xs) * (1.0 - q) ** xs) / (b4 - b5 * (1.0 - q) ** (xs - 1.0))
    best = int(np.argmin(f)) + 1  # argmin takes the first (smallest) minimizer
    if best == x0_max:
        raise ThresholdCapError(f"argmin hit the search cap x0_max={x0_max}; raise it")
    return best


def _crossing_gap(sp: SubProblem, x: int, c: float) -> float:
    """f(x+1, c) - f(x, c): positive while the lower threshold is better,
    strictly decreasing in c."""
    return average_cost(sp, x + 1, c) - average_cost(sp, x, c)


def whittle_index(
    sp: SubProblem, x: int, search: SearchGrid = SearchGrid(), *, grid_start: int = 0
) -> float:
    """Whittle index of age x: the first grid charge at which raising the
    threshold from x to x+1 stops being worse, i.e. where the sign of
    f(x+1, c) - f(x, c) flips. I(0) is 0 by definition (at age zero transmitting
    and idling induce the same transition, so no positive charge is worth
    paying). ``grid_start`` lets a table build resume the scan where the
    previous age's index was found, exploiting monotonicity in x.

    Raises IndexSearchError when the sign never flips on the grid (the true
    index then exceeds c_high; raise c_high to find it).
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 0.0
    for k in range(grid_start, search.size):
        if _crossing_gap(sp, x, search.point(k)) <= 0.0:
            return search.point(k)
    raise IndexSearchError(
        f"no sign flip for x={x} within [{search.c_low}, {search.c_high}]; raise c_high"
    )


def bisect_index(sp: SubProblem, x: int, c_low: float, c_high: float, tol: float = 1e-9) -> float:
    """Test oracle: refine the charge where f(x+1, c) = f(x, c) by bisection.
    Requires the crossing to be bracketed by [c_low, c_high]."""
    lo, hi = float(c_low), float(c_high)
    if _crossing_gap(sp, x, lo) <= 0.0:
        return lo
    if _crossing_gap(sp, x, hi) > 0.0:
        raise IndexSearchError(f"crossing for x={x} not bracketed by [{c_low}, {c_high}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _crossing_gap(sp, x, mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def verify_indexability(sp: SubProblem, x0_range: Iterable[int] | None = None) -> bool:
    """True iff the stationary mass of the transmit set strictly shrinks as the
    threshold rises, the standard sufficient condition for the index to be
    well defined and monotone."""
    if x0_range is None:
        x0_range = range(1, 502)
    tails = [tail_mass(sp, x0) for x0 in x0_range]
    return all(a > b for a, b in zip(tails, tails[1:]))


@dataclass(frozen=True)
class IndexColumn:
    """Index table column for one device type, plus the grid it was built on.
    ``clamped_from`` is the first age whose true index exceeded the grid and
    was recorded as c_high (None when the grid covered every age)."""

    p: float
    q: float
    w: float
    x_max: int
    dc: float
    c_low: float
    c_high: float
    indices: np.ndarray
    clamped_from: int | None = None

    def __init__(self, p, q, w, x_max, dc, c_low, c_high, indices, clamped_from=None) -> None:
        object.__setattr__(self, "p", float(p))
        object.__setattr__(self, "q", float(q))
        object.__setattr__(self, "w", float(w))
        object.__setattr__(self, "x_max", int(x_max))
        object.__setattr__(self, "dc", float(dc))
        object.__setattr__(self, "c_low", float(c_low))
        object.__setattr__(self, "c_high", float(c_high))
        arr = np.array(indices, dtype=float)
        arr.flags.writeable = False
        object.__setattr__(self, "indices", arr)
        object.__setattr__(self, "clamped_from", None if clamped_from is None else int(clamped_from))


@dataclass(frozen=True)
class WhittleTable:
    """Per-device Whittle indices for ages 0..x_max.

    Devices sharing the same (p, q, w) share one column. ``lookup`` clamps ages
    beyond x_max to the last entry, matching how an offline table is consumed
    at run time.
    """

    columns: tuple[IndexColumn, ...]
    device_column: tuple[int, ...]

    def __init__(self, columns: Sequence[IndexColumn], device_column: Sequence[int]) -> None:
        object.__setattr__(self, "columns", tuple(columns))
        object.__setattr__(self, "device_column", tuple(int(k) for k in device_column))

    @property
    def x_max(self) -> int:
        return min(col.x_max for col in self.columns)

    @property
    def num_devices(self) -> int:
        return len(self.device_column)

    def lookup(self, device: int, x: int) -> float:
        """Index of monitor ``device`` (1-based id, matching the action
        alphabet) at age x, clamped to the column's last age."""
        if not 1 <= device <= len(self.device_column):
            raise ValueError(f"device must lie in 1..{len(self.device_column)}, got {device}")
        col = self.columns[self.device_column[device - 1]]
        return float(col.indices[min(int(x), col.x_max)])

    def index_matrix(self) -> np.ndarray:
        """(num_devices, x_max+1) matrix of indices: row per device, truncated
        to the shortest column so rows align."""
        width = self.x_max + 1
        return np.stack([self.columns[k].indices[:width] for k in self.device_column])

    def indices_at(self, aoii: np.ndarray) -> np.ndarray:
        """Vector of per-device indices at the given ages (clamped)."""
        out = np.empty(len(self.device_column), dtype=float)
        for i, k in enumerate(self.device_column):
            col = self.columns[k]
            out[i] = col.indices[min(int(aoii[i]), col.x_max)]
        return out


def build_table(
    models: Sequence[ProcessModel],
    x_max: int = 500,
    search: SearchGrid = SearchGrid(),
    *,
    clamp_at_cap: bool = True,
) -> WhittleTable:
    """Tabulate indices for every device, one column per distinct (p, q, w).

    The scan over the charge grid is shared across ages: the index is
    non-decreasing in x, so the search for x+1 resumes at the grid point found
    for x, and each column costs one pass over the grid in total. Ages whose
    index exceeds the grid are clamped to c_high when ``clamp_at_cap`` is set
    (the default: every such device simply outranks all unclamped ones);
    otherwise the underlying IndexSearchError propagates.
    """
    keys: list[tuple[float, float, float]] = []
    device_column: list[int] = []
    for pm in models:
        sp = SubProblem.from_process(pm)
        key = (sp.p, sp.q, sp.w)
        if key not in keys:
            keys.append(key)
        device_column.append(keys.index(key))

    columns: list[IndexColumn] = []
    for p, q, w in keys:
        sp = SubProblem(p=p, q=q, w=w)
        if not verify_indexability(sp, range(1, x_max + 2)):
            raise ConfigError(f"sub-problem p={p} q={q} w={w} is not indexable")
        indices = np.zeros(x_max + 1)
        clamped_from: int | None = None
        grid_start = 0
        for x in range(1, x_max + 1):
            try:
                value = whittle_index(sp, x, search, grid_start=grid_start)
            except IndexSearchError:
                if not clamp_at_cap:
                    raise
                clamped_from = x
                indices[x:] = search.c_high
                break
            indices[x] = value
            grid_start = int(round((value - search.c_low) / search.dc))
        columns.append(
            IndexColumn(
                p=p, q=q, w=w, x_max=x_max,
                dc=search.dc, c_low=search.c_low, c_high=search.c_high,
                indices=indices, clamped_from=clamped_from,
            )
        )
    return WhittleTable(columns=columns, device_column=device_column)


def save_table(table: WhittleTable, path) -> None:
    """Serialize to a versioned JSON document (text keeps it diffable)."""
    doc = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "device_column": list(table.device_column),
        "columns": [
            {
                "p": col.p, "q": col.q, "w": col.w, "x_max": col.x_max,
                "dc": col.dc, "c_low": col.c_low, "c_high": col.c_high,
                "clamped_from": col.clamped_from,
                "indices": col.indices.tolist(),
            }
            for col in table.columns
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_table(path) -> WhittleTable:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != TABLE_FORMAT:
        raise ConfigError(f"{path}: not a Whittle table file")
    if doc.get("version") != TABLE_VERSION:
        raise ConfigError(f"{path}: unsupported table version {doc.get('version')!r}")
    columns = [
        IndexColumn(
            p=c["p"], q=c["q"], w=c["w"], x_max=c["x_max"],
            dc=c["dc"], c_low=c["c_low"], c_high=c["c_high"],
            indices=c["indices"], clamped_from=c["clamped_from"],
        )
        for c in doc["columns"]
    ]
    return WhittleTable(columns=columns, device_column=doc["device_column"])


def simulate_threshold_policy(
    sp: SubProblem, threshold: int | None, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """Monte-Carlo visit counts of the single-monitor chain from age 0 under a
    threshold policy (``threshold=None`` never transmits). Entry [x] counts the
    slots whose pre-transition age was x."""
    us = rng.random(steps).tolist()
    counts = [0] * 1024
    p, q = sp.p, sp.q
    thr = threshold if threshold is not None else 1 << 62
    x = 0
    for u in us:
        if x >= len(counts):
            counts.extend([0] * len(counts))
        counts[x] += 1
        succ = p if (x == 0 or x >= thr) else q
        x = 0 if u < succ else x + 1
    arr = np.array(counts, dtype=np.int64)
    nz = np.nonzero(arr)[0]
    return arr[: nz[-1] + 1] if nz.size else arr[:1]
