"""Report files for an evaluation run: JSON, per-entry CSV and a time figure."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .evalharness import (
    HISTOGRAM_BUCKET_SECONDS,
    AggregateReport,
    BuildReport,
    report_to_json,
)

_CSV_FIELDS = (
    "full_name",
    "sha",
    "source",
    "dockerfile_built",
    "tests_ran",
    "wall_seconds",
    "failure_category",
)


def write_report_csv(reports: list[BuildReport], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            row = report.to_json()
            writer.writerow({k: row[k] for k in _CSV_FIELDS})


def write_time_histogram(aggregate: AggregateReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = sorted(
        aggregate.time_histogram, key=lambda lbl: int(lbl.split("-")[0])
    )
    counts = [aggregate.time_histogram[lbl] for lbl in labels]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.bar(range(len(labels)), counts, color="#4878a8")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_xlabel(f"wall time ({HISTOGRAM_BUCKET_SECONDS // 60}-minute buckets)")
    ax.set_ylabel("repositories")
    ax.set_title("Build time distribution")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(
    reports: list[BuildReport],
    aggregate: AggregateReport,
    out_json: Path,
    figures: bool = True,
) -> list[Path]:
    """Write report.json and, alongside it, the CSV and histogram figure."""
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_json.write_text(
        json.dumps(report_to_json(reports, aggregate), indent=2) + "\n",
        encoding="utf-8",
    )
    written = [out_json]
    if figures:
        csv_path = out_json.with_suffix(".csv")
        write_report_csv(reports, csv_path)
        written.append(csv_path)
        figure_path = out_json.parent / "time_histogram.png"
        write_time_histogram(aggregate, figure_path)
        written.append(figure_path)
    return written
