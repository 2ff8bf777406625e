"""Population-level summary of volume reports.

Mean and SD use the population convention (divisor n); at cohort scale the
difference from the sample SD is negligible and the choice is recorded in
the output metadata. Outlier fractions compare against mean +/- 2 SD with
strict inequalities by default; both the inequality style and whether
margin-flagged (zeroed) subjects enter the distribution are config options,
since zero-volume artifacts would otherwise bias the mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import TooFewSubjects
from .metrics import VolumeReport


@dataclass(frozen=True)
class PopulationSummary:
    n: int
    n_zero_flagged: int
    mean_ml: float
    sd_ml: float
    frac_above_2sd: float
    frac_below_2sd: float
    frac_outside_2sd: float
    bounds: tuple[float, float]
    include_flagged: bool
    inclusive_bounds: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n_zero_flagged": self.n_zero_flagged,
            "mean_ml": self.mean_ml,
            "sd_ml": self.sd_ml,
            "sd_convention": "population (divisor n)",
            "frac_above_2sd": self.frac_above_2sd,
            "frac_below_2sd": self.frac_below_2sd,
            "frac_outside_2sd": self.frac_outside_2sd,
            "lower_2sd_ml": self.bounds[0],
            "upper_2sd_ml": self.bounds[1],
            "include_flagged": self.include_flagged,
            "inclusive_bounds": self.inclusive_bounds,
        }


def summarize(
    reports: Iterable[VolumeReport],
    include_flagged: bool = False,
    inclusive_bounds: bool = False,
) -> PopulationSummary:
    """Mean, SD, and +/-2 SD outlier fractions over the included volumes.

    ``n_zero_flagged`` counts margin-flagged reports regardless of whether
    they are included in the distribution.
    """
    reports = list(reports)
    n_flagged = sum(1 for r in reports if r.margin_flagged)
    included = [r for r in reports if include_flagged or not r.margin_flagged]
    if len(included) < 2:
        raise TooFewSubjects(
            f"population summary needs >= 2 included subjects, got {len(included)}"
        )

    volumes = np.array([r.volume_ml for r in included], dtype=np.float64)
    mean = float(volumes.mean())
    sd = float(volumes.std(ddof=0))
    lo, hi = mean - 2.0 * sd, mean + 2.0 * sd
    if inclusive_bounds:
        above_set = volumes >= hi
        below_set = (volumes <= lo) & ~above_set  # disjoint even when sd = 0
    else:
        above_set = volumes > hi
        below_set = volumes < lo
    above = int(np.count_nonzero(above_set))
    below = int(np.count_nonzero(below_set))
    n = len(included)
    return PopulationSummary(
        n=n,
        n_zero_flagged=n_flagged,
        mean_ml=mean,
        sd_ml=sd,
        frac_above_2sd=above / n,
        frac_below_2sd=below / n,
        frac_outside_2sd=(above + below) / n,
        bounds=(lo, hi),
        include_flagged=include_flagged,
        inclusive_bounds=inclusive_bounds,
    )


def histogram_csv(
    reports: Iterable[VolumeReport], bin_width_ml: float = 1.0
) -> list[tuple[float, float, int]]:
    """Histogram rows (bin_left, bin_right, count); bins are [left, right).

    Bins start at 0 and cover every report passed in; counts sum to the
    number of reports. Callers choose which reports to pass (all vs
    unflagged) and emit both variants when needed.
    """
    if not bin_width_ml > 0:
        raise ValueError("bin width must be positive")
    volumes = [r.volume_ml for r in reports]
    if not volumes:
        return []
    n_bins = int(max(volumes) // bin_width_ml) + 1
    counts = [0] * n_bins
    for v in volumes:
        counts[int(v // bin_width_ml)] += 1
    return [
        (i * bin_width_ml, (i + 1) * bin_width_ml, count)
        for i, count in enumerate(counts)
    ]
