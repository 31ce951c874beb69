"""CSV and JSON artifact writers for analysis outputs.

Files are written with fixed column orders, sorted rows, and a plain \n
terminator so that two identical runs produce byte-identical artifacts.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

from .analysis import (
    DeltaObservation,
    NegativeCase,
    StatTestResult,
    SummaryStats,
    per_paper_means,
)
from .store import StatsOverview


def _open_csv(path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_observations_csv(path: str | Path, observations: list[DeltaObservation]) -> None:
    """One row per matched pair: the grey-dot layer."""
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["comparison", "paper_id", "table_index", "model", "dataset",
                      "subset", "metric", "shots_a", "shots_b", "value_a", "value_b",
                      "delta", "categories"])
        rows = sorted(observations, key=lambda o: (
            o.comparison, o.paper_id, o.table_index, o.dataset, o.subset,
            o.metric, o.shots_a, o.shots_b, o.value_a, o.value_b))
        for o in rows:
            out.writerow([o.comparison, o.paper_id, o.table_index, o.model, o.dataset,
                          o.subset, o.metric, o.shots_a, o.shots_b, o.value_a, o.value_b,
                          o.delta, "|".join(sorted(o.categories))])


def write_per_paper_means_csv(path: str | Path, observations: list[DeltaObservation]) -> None:
    """Per-paper mean delta within each category: the blue-dot layer."""
    means = per_paper_means(observations)
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["category", "paper_id", "mean_delta", "n"])
        for (category, paper_id), (mean, n) in means.items():
            out.writerow([category, paper_id, f"{mean:.6g}", n])


def write_category_summary_csv(
    path: str | Path, summaries: dict[str, SummaryStats]
) -> None:
    """Per-category quantile summary: the star layer."""
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["category", "n", "mean", "median", "q1", "q3"])
        for category in sorted(summaries):
            s = summaries[category]
            out.writerow([category, s.n, f"{s.mean:.6g}", f"{s.median:.6g}",
                          f"{s.q1:.6g}", f"{s.q3:.6g}"])


def _fmt_result(result: StatTestResult | None) -> list[str]:
    if result is None or result.n < 2:
        return ["", "", ""]
    return [f"{result.mean_delta:.2f}", f"{result.p_value:.4f}",
            "Yes" if result.significant else "No"]


def write_test_results_csv(
    path: str | Path,
    total: list[StatTestResult],
    filtered: list[StatTestResult] | None = None,
) -> None:
    """Category significance table: total results beside venue-filtered ones."""
    filtered_by_cat = {r.category: r for r in (filtered or [])}
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["category",
                      "mean_delta_total", "p_value_total", "significant_total",
                      "mean_delta_filtered", "p_value_filtered", "significant_filtered"])
        for result in total:
            out.writerow([result.category, *_fmt_result(result),
                          *_fmt_result(filtered_by_cat.get(result.category))])


def write_joint_summary_csv(
    path: str | Path, rows: list[tuple[str, str, SummaryStats]]
) -> None:
    """(comparison, tag, stats) rows for the joint prompting analyses."""
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["comparison", "tag", "n", "median", "q1", "q3", "mean"])
        for comparison, tag, s in rows:
            out.writerow([comparison, tag, s.n, f"{s.median:.6g}", f"{s.q1:.6g}",
                          f"{s.q3:.6g}", f"{s.mean:.6g}"])


def write_trend_csv(path: str | Path, trend: dict[tuple[str, str], int]) -> None:
    with _open_csv(path) as fh:
        out = _writer(fh)
        out.writerow(["category", "quarter", "count"])
        for (category, quarter), count in sorted(trend.items()):
            out.writerow([category, quarter, count])


def write_negative_cases(path: str | Path, cases: dict[str, list[NegativeCase]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for comparison in sorted(cases):
            for case in cases[comparison]:
                o = case.observation
                fh.write(json.dumps({
                    "comparison": comparison,
                    "paper_id": o.paper_id,
                    "table_index": o.table_index,
                    "dataset": o.dataset,
                    "subset": o.subset,
                    "delta": o.delta,
                    "description": case.description_text,
                }, ensure_ascii=False, sort_keys=True) + "\n")


def write_stats_json(path: str | Path, stats: StatsOverview) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def stats_text(stats: StatsOverview) -> str:
    lines = [
        f"Total records:      {stats.total_records}",
        f"Unique datasets:    {stats.unique_datasets}",
        f"Source papers:      {stats.source_papers}",
        f"Unique tables:      {stats.unique_tables}",
        "Records per model:",
    ]
    for model, count in sorted(stats.per_model.items(), key=lambda kv: -kv[1]):
        lines.append(f"  {model}: {count}")
    lines += [
        f"Missing subset:     {stats.missing_subset}",
        f"Missing prompting:  {stats.missing_prompting}",
        f"Missing shots:      {stats.missing_shots}",
        "Description sources:",
    ]
    for source, count in sorted(stats.description_sources.items(), key=lambda kv: -kv[1]):
        lines.append(f"  {source}: {count}")
    return "\n".join(lines)
