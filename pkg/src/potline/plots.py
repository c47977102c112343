"""gnuplot-ready data and script text. Nothing is rendered here."""

from __future__ import annotations

from typing import Any

import numpy as np

from .evaluate import ForecastBands, ForecastReport
from .models import STATE_NAMES


def _comment(provenance: dict[str, Any]) -> str:
    return "# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) + "\n"


def bar_dat(report: ForecastReport, horizon: int, provenance: dict[str, Any]) -> str:
    """One line per model group: index, group, median, min, max."""
    lines = [_comment(provenance), "# index group median min max\n"]
    for i, (group, s) in enumerate(report.group_summary(horizon).items()):
        lines.append(f"{i} {group} {s['median']:.17g} {s['min']:.17g} {s['max']:.17g}\n")
    return "".join(lines)


def bar_gp(
    dat_name: str, horizon: int, provenance: dict[str, Any], logscale: bool = True
) -> str:
    """Bars of the group medians with min-max whiskers.

    A log y axis cannot show zero scores, so pass `logscale=False` when any
    group minimum is zero.
    """
    return (
        _comment(provenance)
        + f"set title 'AN-RFMSE, horizon {horizon} steps'\n"
        "set style fill solid 0.6\n"
        "set boxwidth 0.6\n"
        + ("set logscale y\n" if logscale else "")
        + "set xtics rotate by -30\n"
        "set ylabel 'AN-RFMSE (median, min-max)'\n"
        f"plot '{dat_name}' using 1:3:xtic(2) with boxes notitle, \\\n"
        f"     '' using 1:3:4:5 with yerrorbars lc rgb 'black' notitle\n"
    )


def band_dat(bands: ForecastBands, provenance: dict[str, Any]) -> str:
    """Columns: t, then truth/mean/std for each state."""
    cols = ["t"] + [f"{s}_{k}" for s in STATE_NAMES for k in ("truth", "mean", "std")]
    table = [bands.times]
    for i in range(len(STATE_NAMES)):
        table += [bands.truth[:, i], bands.mean[:, i], bands.std[:, i]]
    body = np.column_stack(table)
    lines = [_comment(provenance), "# " + " ".join(cols) + "\n"]
    lines += [" ".join(f"{v:.17g}" for v in row) + "\n" for row in body]
    return "".join(lines)


def band_gp(dat_name: str, group: str, provenance: dict[str, Any]) -> str:
    plots = []
    for i, state in enumerate(STATE_NAMES):
        truth, mean, std = 2 + 3 * i, 3 + 3 * i, 4 + 3 * i
        plots.append(
            f"set title '{group}: {state}'\n"
            f"plot '{dat_name}' using 1:(${mean}-${std}):(${mean}+${std}) "
            "with filledcurves lc rgb '#c0c0ff' title 'mean +/- std', \\\n"
            f"     '' using 1:{mean} with lines lc rgb 'blue' title 'forecast mean', \\\n"
            f"     '' using 1:{truth} with lines lc rgb 'black' title 'simulated'\n"
        )
    return (
        _comment(provenance)
        + "set multiplot layout 4,2\nset xlabel 't [s]'\n"
        + "".join(plots)
        + "unset multiplot\n"
    )
