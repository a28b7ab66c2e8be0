"""Fan sets and segment lifts from model-implied within-user rankings.

Definitions (chosen here; utilities are not comparable across users, so
everything goes through within-user percentiles):

* percentile of item j for user i: ``100 * (#below + 0.5 * #ties) / (n_items - 1)``
  where ties exclude j itself;
* fans of j at threshold k: users whose percentile for j is >= ``100 - k``;
* composition lift of segment s: share of s among fans / share of s in the population;
* percentile lift of s: mean percentile of j within s / population mean percentile.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_model import ItemCatalog, ModelParams, utility_matrix, utility_row
from .errors import IngestionError


def percentiles_from_utilities(U: np.ndarray, item: int) -> np.ndarray:
    """Percentile of ``item`` in each row of the utility matrix ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    n_items = U.shape[1]
    if n_items < 2:
        raise ValueError("percentiles need at least 2 items")
    target = U[:, [item]]
    below = np.sum(U < target, axis=1)
    ties = np.sum(U == target, axis=1) - 1
    return 100.0 * (below + 0.5 * ties) / (n_items - 1)


def utility_percentile(params: ModelParams, catalog: ItemCatalog, user: int, item: int) -> float:
    return float(percentiles_from_utilities(utility_row(params, catalog, user)[None, :], item)[0])


def item_percentiles(params: ModelParams, catalog: ItemCatalog, item: int) -> np.ndarray:
    """Every user's percentile for ``item``."""
    return percentiles_from_utilities(utility_matrix(params, catalog), item)


def fans_from_percentiles(pct: np.ndarray, threshold_pct: float) -> set[int]:
    if not 0 < threshold_pct < 100:
        raise ValueError("threshold_pct must lie in (0, 100)")
    return set(np.flatnonzero(pct >= 100.0 - threshold_pct).tolist())


def fans_of(params: ModelParams, catalog: ItemCatalog, item: int, threshold_pct: float = 10.0) -> set[int]:
    """Users for whom ``item`` is within their top ``threshold_pct`` percent."""
    return fans_from_percentiles(item_percentiles(params, catalog, item), threshold_pct)


@dataclass(frozen=True)
class SegmentAssignment:
    labels: tuple[str, ...]

    @property
    def n_users(self) -> int:
        return len(self.labels)

    def segments(self) -> list[str]:
        return sorted(set(self.labels))

    def members(self, segment: str) -> list[int]:
        return [i for i, s in enumerate(self.labels) if s == segment]


def composition_lift(fans, segments: SegmentAssignment) -> dict[str, float]:
    """Segment share among fans over segment share in the population."""
    fans = set(fans)
    if not fans:
        raise ValueError("fan set is empty; composition lift undefined")
    n = segments.n_users
    pop = Counter(segments.labels)
    among = Counter(segments.labels[i] for i in fans)
    return {s: (among.get(s, 0) / len(fans)) / (pop[s] / n) for s in segments.segments() if pop[s]}


def percentile_lift_from_percentiles(pct: np.ndarray, segments: SegmentAssignment) -> dict[str, float]:
    overall = float(np.mean(pct))
    out = {}
    for s in segments.segments():
        idx = segments.members(s)
        out[s] = float(np.mean(pct[idx])) / overall if overall > 0 else float("nan")
    return out


def percentile_lift(params: ModelParams, catalog: ItemCatalog, item: int, segments: SegmentAssignment) -> dict[str, float]:
    return percentile_lift_from_percentiles(item_percentiles(params, catalog, item), segments)


@dataclass(frozen=True)
class LiftRow:
    label: str
    population_share: float
    fan_share: float
    composition_lift: float
    mean_percentile: float
    percentile_lift: float
    percentile_diff: float


@dataclass(frozen=True)
class LiftReport:
    item_id: str
    fan_threshold: float
    rows: tuple[LiftRow, ...]
    n_fans: int

    HEADER = ("item_id", "fan_threshold", "segment", "population_share", "fan_share", "composition_lift",
              "mean_percentile", "percentile_lift", "percentile_diff")

    def csv_rows(self):
        for r in self.rows:
            yield [self.item_id, repr(float(self.fan_threshold)), r.label, repr(r.population_share),
                   repr(r.fan_share), repr(r.composition_lift), repr(r.mean_percentile),
                   repr(r.percentile_lift), repr(r.percentile_diff)]

    def to_table(self) -> str:
        lines = [f"item {self.item_id}: fans = top {self.fan_threshold:g}% ({self.n_fans} users)",
                 f"{'segment':<16}{'pop':>8}{'fans':>8}{'comp.lift':>11}{'mean pct':>10}{'pct.lift':>10}"]
        for r in self.rows:
            lines.append(f"{r.label:<16}{r.population_share:>8.3f}{r.fan_share:>8.3f}{r.composition_lift:>11.3f}"
                         f"{r.mean_percentile:>10.2f}{r.percentile_lift:>10.3f}")
        return "\n".join(lines)


def lift_report(params: ModelParams, catalog: ItemCatalog, item: int, segments: SegmentAssignment,
                threshold_pct: float = 10.0) -> LiftReport:
    """Composition and percentile lifts for every segment.

    With no fans the composition columns are NaN rather than an error, so a
    report can still be emitted for every requested item.
    """
    if segments.n_users != params.n_users:
        raise ValueError("segment assignment must cover every model user")
    pct = item_percentiles(params, catalog, item)
    fans = fans_from_percentiles(pct, threshold_pct)
    comp = composition_lift(fans, segments) if fans else {}
    overall = float(np.mean(pct))
    n = segments.n_users
    pop = Counter(segments.labels)
    among = Counter(segments.labels[i] for i in fans)
    rows = []
    for s in segments.segments():
        mean_s = float(np.mean(pct[segments.members(s)]))
        rows.append(LiftRow(
            s,
            pop[s] / n,
            among.get(s, 0) / len(fans) if fans else float("nan"),
            comp.get(s, float("nan")),
            mean_s,
            mean_s / overall if overall > 0 else float("nan"),
            mean_s - overall,
        ))
    return LiftReport(catalog.item_ids[item], threshold_pct, tuple(rows), len(fans))


def read_segments_csv(path, user_ids) -> SegmentAssignment:
    """Read ``user_id,segment`` rows; every listed user must get exactly one label."""
    path = Path(path)
    labels: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"user_id", "segment"} - set(reader.fieldnames or [])
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if row["user_id"] in labels and labels[row["user_id"]] != row["segment"]:
                raise IngestionError(f"{path}:{lineno}: user {row['user_id']!r} has two segments")
            labels[row["user_id"]] = row["segment"]
    absent = [u for u in user_ids if u not in labels]
    if absent:
        raise IngestionError(f"{path}: no segment for users {absent[:5]}{'...' if len(absent) > 5 else ''}")
    return SegmentAssignment(tuple(labels[u] for u in user_ids))


def write_lift_csv(reports, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LiftReport.HEADER)
    for rep in reports:
        writer.writerows(rep.csv_rows())
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
