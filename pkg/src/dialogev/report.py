"""Report rendering: CSV companions and matplotlib figures for metric output.

Every evaluation command writes three sibling artifacts per report: the JSON
contract file, a CSV with the same numbers for spreadsheet use, and a PNG
bar chart. Figures use the Agg backend so rendering works headless.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .corpus import atomic_write_text
from .metrics import MetricReport, OverlapReport

FIGURE_DPI = 150
METRIC_COLUMNS = ("f1", "bleu", "dist1", "dist2")


def _csv_cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_metric_csv(report: MetricReport, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*METRIC_COLUMNS, "n"])
    writer.writerow(
        [_csv_cell(getattr(report, c)) for c in METRIC_COLUMNS] + [report.n_examples]
    )
    atomic_write_text(path, buf.getvalue())


def write_overlap_csv(report: OverlapReport, path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["bin", "n", *METRIC_COLUMNS])
    for b in report.bins:
        row = [b.label, b.n_examples]
        for column in METRIC_COLUMNS:
            row.append(_csv_cell(getattr(b.metrics, column)) if b.metrics else "")
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def render_metric_figure(report: MetricReport, path, title: str = "corpus metrics") -> None:
    """Four-bar summary of one MetricReport (dist shown as percentages)."""
    labels = ["F1", "BLEU", "Dist-1", "Dist-2"]
    values = [
        report.f1,
        report.bleu,
        report.dist1 if report.dist1 is not None else 0.0,
        report.dist2 if report.dist2 is not None else 0.0,
    ]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(labels, [v * 100.0 for v in values], color="#4878a8")
    ax.set_ylabel("value (%)")
    ax.set_title(f"{title} (n={report.n_examples})")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def render_overlap_figure(report: OverlapReport, path) -> None:
    """Per-bin bar charts: one panel per metric plus the bin populations."""
    labels = [b.label for b in report.bins]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = list(zip(axes.flat, ["f1", "bleu", "dist1", "dist2"]))
    for ax, column in panels:
        values = [
            (getattr(b.metrics, column) or 0.0) * 100.0 if b.metrics else 0.0
            for b in report.bins
        ]
        ax.bar(range(len(labels)), values, color="#4878a8")
        ax.set_title(column)
        ax.set_ylabel("%")
        ax.grid(axis="y", alpha=0.3)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=45 if report.mode.value == "sum" else 0)
    fig.suptitle(f"metrics by evidence-overlap bin ({report.mode.value} mode)")
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)


def render_overlap_counts_figure(report: OverlapReport, path) -> None:
    labels = [b.label for b in report.bins]
    counts = [b.n_examples for b in report.bins]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(labels)), counts, color="#a87848")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45 if report.mode.value == "sum" else 0)
    ax.set_ylabel("instances")
    ax.set_title(f"bin populations ({report.mode.value} mode)")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
