"""Quantitative metric suite over a track result.

Per cyst: calibrated area and perimeter trajectories, circularity
evolution, overall growth rate and a fast/medium/slow phenotype class.
Per population: cyst formation rate (percentage of organoids with at
least one cyst) and cyst density (mean cysts per organoid) over time.

Frames where a cyst is absent carry no values at all; zero-filling would
fabricate a growth spike at formation, so trajectories simply start at
the formation frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotation import ValidatedSession, timestamps
from .masks import morphometry
from .tracking import TrackResult

PHENOTYPE_FAST = "fast"
PHENOTYPE_MEDIUM = "medium"
PHENOTYPE_SLOW = "slow"

# Percentile boundaries for the three growth phenotypes.
SLOW_PERCENTILE = 33.0
FAST_PERCENTILE = 67.0


class MetricsError(Exception):
    pass


class InsufficientFramesError(MetricsError):
    """Growth rate needs at least two present frames."""


class NoDefinedRatesError(MetricsError):
    """No cyst has enough present frames to define a growth rate."""


@dataclass(frozen=True)
class FrameMeasure:
    """Morphometrics of one cyst at one frame; None fields when absent."""

    frame: int
    time_h: float
    present: bool
    area_px: int | None = None
    area_um2: float | None = None
    perimeter_um: float | None = None
    circularity: float | None = None
    centroid: tuple[float, float] | None = None
    unreliable: bool = False


@dataclass(frozen=True)
class CystRecord:
    cyst_id: int
    organoid_id: int
    frames: tuple[FrameMeasure, ...]

    @property
    def present_frames(self) -> list[FrameMeasure]:
        return [f for f in self.frames if f.present]


@dataclass(frozen=True)
class PopulationFrame:
    frame: int
    time_h: float
    n_organoids_with_cysts: int
    n_total_cysts: int
    formation_rate_percent: float
    cyst_density: float


@dataclass(frozen=True)
class PopulationSeries:
    n_total_organoids: int
    frames: tuple[PopulationFrame, ...]


@dataclass(frozen=True)
class GrowthRow:
    cyst_id: int
    overall_growth_rate: float
    phenotype: str
    heatmap_row: int


@dataclass(frozen=True)
class GrowthSummary:
    """Defined-rate cysts sorted for the heatmap (fastest grower first)."""

    rows: tuple[GrowthRow, ...]
    p33: float
    p67: float

    def row_of(self, cyst_id: int) -> GrowthRow | None:
        for row in self.rows:
            if row.cyst_id == cyst_id:
                return row
        return None


def cyst_records(
    track: TrackResult,
    session: ValidatedSession,
    component_policy: str = "largest",
) -> list[CystRecord]:
    """One calibrated morphometric record per prompted cyst.

    Area converts as area_um2 = area_px * um_per_pixel**2, perimeter as
    perimeter_px * um_per_pixel. Absent frames are marked, not zero-filled.
    """
    cal = session.calibration
    times = timestamps(cal)
    upp = cal.um_per_pixel
    organoid_of = session.organoid_of_cyst

    records = []
    for cyst_id in sorted(track.tracks):
        ct = track.tracks[cyst_id]
        measures = []
        for frame in range(track.n_frames):
            if not ct.present[frame]:
                measures.append(
                    FrameMeasure(frame=frame, time_h=times[frame], present=False)
                )
                continue
            m = morphometry(ct.masks[frame], component_policy=component_policy)
            measures.append(
                FrameMeasure(
                    frame=frame,
                    time_h=times[frame],
                    present=True,
                    area_px=m.area_px,
                    area_um2=m.area_px * upp**2,
                    perimeter_um=m.perimeter_px * upp,
                    circularity=m.circularity,
                    centroid=m.centroid,
                    unreliable=m.unreliable,
                )
            )
        records.append(
            CystRecord(
                cyst_id=cyst_id,
                organoid_id=organoid_of[cyst_id],
                frames=tuple(measures),
            )
        )
    return records


def population_series(
    records: list[CystRecord], session: ValidatedSession
) -> PopulationSeries:
    """Formation rate and cyst density per frame.

    formation_rate(t) = 100 * |organoids with >= 1 present cyst at t| / N;
    cyst_density(t) = (present cysts at t) / N, with N the total organoid
    count from the annotation session (cystless organoids included).
    """
    n_organoids = session.n_total_organoids
    if n_organoids < 1:
        raise MetricsError("population metrics need at least one organoid")
    n_frames = session.calibration.frame_count
    times = timestamps(session.calibration)

    frames = []
    for frame in range(n_frames):
        with_cysts = {
            r.organoid_id for r in records if r.frames[frame].present
        }
        n_cysts = sum(1 for r in records if r.frames[frame].present)
        frames.append(
            PopulationFrame(
                frame=frame,
                time_h=times[frame],
                n_organoids_with_cysts=len(with_cysts),
                n_total_cysts=n_cysts,
                formation_rate_percent=100.0 * len(with_cysts) / n_organoids,
                cyst_density=n_cysts / n_organoids,
            )
        )
    return PopulationSeries(n_total_organoids=n_organoids, frames=tuple(frames))


def overall_growth_rate(record: CystRecord) -> float:
    """Mean of consecutive area differences over the present interval.

    rate = (1/n) * sum((A[i+1] - A[i]) / (t[i+1] - t[i])) with n one less
    than the number of present frames. Raises InsufficientFramesError when
    the cyst is present in fewer than two frames.
    """
    present = record.present_frames
    if len(present) < 2:
        raise InsufficientFramesError(
            f"cyst {record.cyst_id} present in {len(present)} frame(s); need >= 2"
        )
    diffs = [
        (b.area_um2 - a.area_um2) / (b.time_h - a.time_h)
        for a, b in zip(present, present[1:])
    ]
    return sum(diffs) / len(diffs)


def growth_summary(records: list[CystRecord]) -> GrowthSummary:
    """Classify cysts as fast/medium/slow growers and order heatmap rows.

    Thresholds are the 33rd/67th percentiles (linear interpolation) of the
    defined rates: rate >= P67 is fast, rate <= P33 is slow, the rest
    medium. When the percentiles coincide (degenerate distributions) the
    comparisons become strict so everything at the common value is medium.
    Cysts without a defined rate are excluded. Rows sort by rate
    descending, ties by cyst_id ascending.
    """
    rates = {}
    for record in records:
        try:
            rates[record.cyst_id] = overall_growth_rate(record)
        except InsufficientFramesError:
            continue
    if not rates:
        raise NoDefinedRatesError("no cyst has a defined growth rate")

    values = np.array(sorted(rates.values()))
    p33 = float(np.percentile(values, SLOW_PERCENTILE))
    p67 = float(np.percentile(values, FAST_PERCENTILE))

    def classify(rate: float) -> str:
        if p33 == p67:
            if rate > p67:
                return PHENOTYPE_FAST
            if rate < p33:
                return PHENOTYPE_SLOW
            return PHENOTYPE_MEDIUM
        if rate >= p67:
            return PHENOTYPE_FAST
        if rate <= p33:
            return PHENOTYPE_SLOW
        return PHENOTYPE_MEDIUM

    order = sorted(rates, key=lambda cid: (-rates[cid], cid))
    rows = tuple(
        GrowthRow(
            cyst_id=cid,
            overall_growth_rate=rates[cid],
            phenotype=classify(rates[cid]),
            heatmap_row=i,
        )
        for i, cid in enumerate(order)
    )
    return GrowthSummary(rows=rows, p33=p33, p67=p67)


def correlation_table(
    records: list[CystRecord],
) -> list[tuple[float, float, float, int]]:
    """Rows (time_h, circularity, area_um2, cyst_id), one per present frame.

    This is exactly the data behind the circularity-area-time scatter.
    """
    rows = []
    for record in records:
        for f in record.present_frames:
            rows.append((f.time_h, f.circularity, f.area_um2, record.cyst_id))
    return rows
