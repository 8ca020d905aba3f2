"""
Tidy plot-data CSVs derived from a results archive.
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

import pandas as pd

from modules.multiplicity.combinatorics import count_equal_utility, table1_grid
from modules.multiplicity.domain import EqualUtilitySpace
from modules.multiplicity.exceptions import MissingMetricError, UnknownFigureError
from modules.multiplicity.runner.archive import ResultsArchive
from modules.multiplicity.runner.pipeline import EQUAL_UTILITY

logger = logging.getLogger(__name__)

# Worked example: 10 candidates, 5 selected, 6 qualified, 4 selected qualified
WORKED_EXAMPLE = EqualUtilitySpace(n=10, k=5, n_prime=6, k_prime=4, delta=0)

SUMMARY_COLUMNS = ["selection_rate", "q", "method", "mapping", "count", "mean", "sd"]


def _needs(archive: Optional[ResultsArchive], figure_id: str) -> ResultsArchive:
    if archive is None:
        raise MissingMetricError(f"Figure '{figure_id}' needs a results archive")
    return archive


def worked_example_count(_: Optional[ResultsArchive]) -> pd.DataFrame:
    space = WORKED_EXAMPLE
    return pd.DataFrame([{
        "n": space.n,
        "k": space.k,
        "n_prime": space.n_prime,
        "k_prime": space.k_prime,
        "delta": space.delta,
        "count": str(count_equal_utility(space)),
    }])


def table1(_: Optional[ResultsArchive]) -> pd.DataFrame:
    return pd.DataFrame(table1_grid())


def threshold_ratios(archive: Optional[ResultsArchive]) -> pd.DataFrame:
    """Lowest recovered threshold ratio per method next to the reference allocation's ratio."""
    archive = _needs(archive, "fig2")
    recovered = archive.metric("min_threshold_ratio", mapping="top_k")
    reference = archive.metric("reference_threshold_ratio", method=EQUAL_UTILITY, mapping="reference")
    return pd.concat([recovered, reference])[SUMMARY_COLUMNS].reset_index(drop=True)


def systemic_rejection(archive: Optional[ResultsArchive]) -> pd.DataFrame:
    """Share of qualified individuals rejected by every allocation, per method and for equal-utility samples."""
    archive = _needs(archive, "fig3b")
    rows = archive.metric("systemic_rejection")
    rows = rows[rows["mapping"].isin(["top_k", "uniform_sample"])]
    return rows[SUMMARY_COLUMNS].reset_index(drop=True)


def age_histogram(archive: Optional[ResultsArchive]) -> pd.DataFrame:
    """Mean selected share per age bracket: ensemble allocations vs sampled equal-utility allocations."""
    archive = _needs(archive, "fig4c")
    frame = archive.load_age_histograms()
    if frame.empty:
        raise MissingMetricError(f"No age histograms in {archive.root}")
    grouped = frame.groupby(["selection_rate", "q", "source", "age_bracket"], sort=True)["share"]
    return grouped.agg(["mean", "std", "count"]).rename(columns={"std": "sd"}).reset_index()


def risk_distribution(archive: Optional[ResultsArchive]) -> pd.DataFrame:
    """Score summaries by race at every illness level, one row per (q, method, level, race)."""
    archive = _needs(archive, "fig6")
    rows: List[Dict[str, object]] = []
    for q_key, methods in archive.load_risk().items():
        for method, levels in methods.items():
            for level, by_race in levels.items():
                for race, summary in by_race.items():
                    row: Dict[str, object] = {"q": int(q_key.lstrip("q")), "method": method,
                                              "illness_level": int(level), "race": race}
                    if summary is None:
                        row["individuals"] = 0
                    else:
                        row.update({key: summary[key] for key in ("individuals", "scores", "mean", "sd")})
                        row.update(summary["quantiles"])
                    rows.append(row)
    if not rows:
        raise MissingMetricError(f"No risk summaries in {archive.root}")
    return pd.DataFrame(rows).sort_values(["q", "method", "illness_level", "race"]).reset_index(drop=True)


FIGURES: Dict[str, Callable[[Optional[ResultsArchive]], pd.DataFrame]] = {
    "1-count": worked_example_count,
    "table1": table1,
    "fig2": threshold_ratios,
    "fig3b": systemic_rejection,
    "fig4c": age_histogram,
    "fig6": risk_distribution,
}


def emit_plot_data(archive: Optional[ResultsArchive], figure_id: str, out_dir: Optional[str | Path] = None) -> Path:
    """
    Write the CSV behind one figure.

    Args:
        archive: Results archive (not needed for "1-count" and "table1").
        figure_id: One of FIGURES.
        out_dir: Target directory; defaults to the archive's figures directory.

    Returns:
        Path of the written CSV.

    Raises:
        UnknownFigureError: If figure_id is not a known figure.
        MissingMetricError: If the archive lacks what the figure needs.
    """
    builder = FIGURES.get(figure_id)
    if builder is None:
        raise UnknownFigureError(figure_id, FIGURES)
    frame = builder(archive)
    if out_dir is not None:
        target = Path(out_dir)
    elif archive is not None:
        target = archive.figures_dir
    else:
        target = Path("figures")
    target.mkdir(parents=True, exist_ok=True)
    path = target / f"{figure_id}.csv"
    frame.to_csv(path, index=False)
    logger.info("Wrote %d rows to %s", len(frame), path)
    return path
