"""Box-plot summaries and real-vs-synthetic population comparison."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .morphology import REPORT_FIELDS, MinkowskiReport

FENCE = 1.5


@dataclass(frozen=True)
class BoxPlotStats:
    min: float
    q1: float
    median: float
    mean: float
    q3: float
    max: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...] = ()

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def box_plot(values) -> BoxPlotStats:
    """Tukey box plot with linearly interpolated quartiles.

    Whiskers reach the most extreme data points within 1.5 IQR of the
    quartiles.  When no data point lies between a fence and its quartile
    the whisker collapses onto the quartile.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ValueError("box_plot needs at least one value")
    q1, median, q3 = np.percentile(x, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - FENCE * iqr, q3 + FENCE * iqr

    inside = x[(x >= lo_fence) & (x <= hi_fence)]
    whisker_low = min(float(inside.min()), q1) if inside.size else q1
    whisker_high = max(float(inside.max()), q3) if inside.size else q3
    outliers = tuple(float(v) for v in x[(x < whisker_low) | (x > whisker_high)])
    return BoxPlotStats(
        min=float(x[0]),
        q1=float(q1),
        median=float(median),
        mean=math.fsum(x) / x.size,
        q3=float(q3),
        max=float(x[-1]),
        whisker_low=float(whisker_low),
        whisker_high=float(whisker_high),
        outliers=outliers,
    )


def relative_median_difference(real: BoxPlotStats, synth: BoxPlotStats) -> float:
    diff = abs(real.median - synth.median)
    if real.median == 0:
        return 0.0 if diff == 0 else float("inf")
    return diff / abs(real.median)


def interval_overlap(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Overlap coefficient |a & b| / min(|a|, |b|) of two closed intervals."""
    (a0, a1), (b0, b1) = a, b
    shortest = min(a1 - a0, b1 - b0)
    if shortest == 0:
        # a point interval overlaps fully if it lies inside the other one
        point, (lo, hi) = ((a0, (b0, b1)) if a1 - a0 == 0 else (b0, (a0, a1)))
        return 1.0 if lo <= point <= hi else 0.0
    inter = min(a1, b1) - max(a0, b0)
    return float(min(max(inter, 0.0) / shortest, 1.0))


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    real: BoxPlotStats
    synth: BoxPlotStats
    relative_median_difference: float
    iqr_overlap: float


@dataclass(frozen=True)
class ComparisonReport:
    metrics: dict[str, MetricComparison]
    real_values: dict[str, list[float]]
    synth_values: dict[str, list[float]]

    def to_dict(self) -> dict:
        return {
            name: {
                "real": asdict(m.real),
                "synthetic": asdict(m.synth),
                "relative_median_difference": m.relative_median_difference,
                "iqr_overlap": m.iqr_overlap,
            }
            for name, m in self.metrics.items()
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def metric_csv(self, metric: str) -> str:
        """Rows of (population, value) ready for an external box-plot tool."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("population", "value"))
        for label, values in (("real", self.real_values), ("synthetic", self.synth_values)):
            for v in values[metric]:
                writer.writerow((label, repr(v)))
        return buf.getvalue()


def _metric_values(reports, metric: str) -> list[float]:
    values = []
    for rep in reports:
        v = getattr(rep, metric)
        if v is None:
            raise ValueError(f"report is missing {metric}")
        values.append(float(v))
    return values


def compare_populations(real: list[MinkowskiReport], synth: list[MinkowskiReport]) -> ComparisonReport:
    if not real or not synth:
        raise ValueError("both populations must be nonempty")
    metrics, real_values, synth_values = {}, {}, {}
    for name in REPORT_FIELDS:
        rv, sv = _metric_values(real, name), _metric_values(synth, name)
        rb, sb = box_plot(rv), box_plot(sv)
        metrics[name] = MetricComparison(
            metric=name,
            real=rb,
            synth=sb,
            relative_median_difference=relative_median_difference(rb, sb),
            iqr_overlap=interval_overlap((rb.q1, rb.q3), (sb.q1, sb.q3)),
        )
        real_values[name], synth_values[name] = rv, sv
    return ComparisonReport(metrics, real_values, synth_values)
