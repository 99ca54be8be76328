"""Adherence, informativeness, report grids, and trade-off curves.

Aggregation is a single-threaded fold in input order so floating-point
output is deterministic. Tables round percentages half-up to one decimal;
the CSV keeps full precision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import decompose
from .backend import Backend, GenerationParams
from .core import (
    EvaluationRecord,
    FactualityLevel,
    ResponseInput,
    round_half_up,
)
from .errors import ValidationError
from .verify import FactualityScore, factuality, label_facts

logger = logging.getLogger(__name__)

CURVE_CSV_COLUMNS = ("level", "mean_factuality", "mean_informativeness", "adherence_rate", "n")


def adherence(score: FactualityScore, level: FactualityLevel) -> int:
    """1 iff the factuality score is defined and meets the level (inclusive).
    Undefined factuality (an empty response) never adheres."""
    if not score.is_defined:
        return 0
    return 1 if score.value >= level.value else 0


def record_adherence(record: EvaluationRecord, level: FactualityLevel) -> int:
    if record.factuality is None:
        return 0
    return 1 if record.factuality >= level.value else 0


def adherence_rate(records: Sequence[EvaluationRecord], level: FactualityLevel) -> float:
    """Percentage of records meeting the level, full precision."""
    if not records:
        raise ValidationError("adherence_rate requires at least one record")
    hits = sum(record_adherence(record, level) for record in records)
    return 100.0 * hits / len(records)


def informativeness(record: EvaluationRecord) -> tuple:
    """(fact count, facts per 100 words). Empty responses report (0, 0.0)."""
    if record.word_count == 0:
        if record.fact_count:
            raise ValidationError("facts without words is not a valid record")
        return (0, 0.0)
    return (record.fact_count, 100.0 * record.fact_count / record.word_count)


def relative_gain(new: float, base: float) -> Optional[float]:
    """Percentage improvement of ``new`` over ``base``; None when the base is
    zero (the ratio is undefined there)."""
    if base < 0:
        raise ValidationError("relative_gain requires a non-negative base")
    if base == 0:
        return None
    return 100.0 * (new / base - 1.0)


# ---------------------------------------------------------------------------
# Response evaluation
# ---------------------------------------------------------------------------

def evaluate_response(
    response: ResponseInput,
    verifier,
    mode: str = "rule",
    backend: Optional[Backend] = None,
    entity_name: Optional[str] = None,
    params: Optional[GenerationParams] = None,
    prompts_dir: Optional[str] = None,
) -> EvaluationRecord:
    """Segment, verify, and score one response into an EvaluationRecord."""
    record = response.to_response_record()
    facts = decompose.segment(
        record, mode=mode, backend=backend, params=params, prompts_dir=prompts_dir
    )
    labeled = label_facts(
        facts, verifier, entity_name=entity_name, question_id=response.question_id
    )
    score = factuality(labeled)
    return EvaluationRecord(
        question_id=response.question_id,
        fact_count=score.total,
        supported_count=score.supported,
        factuality=score.value,
        word_count=len(response.text.split()),
        level_requested=response.level,
    )


# ---------------------------------------------------------------------------
# Trade-off curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TradeoffPoint:
    level: FactualityLevel
    mean_factuality: float
    mean_informativeness: float
    adherence_rate: float
    n: int

    def __post_init__(self):
        if not 0.0 <= self.adherence_rate <= 100.0:
            raise ValidationError("adherence_rate must lie in [0, 100]")
        if self.n < 1:
            raise ValidationError("a trade-off point needs at least one record")


def group_by_level(records: Iterable[EvaluationRecord]) -> dict:
    groups: dict = {}
    skipped = 0
    for record in records:
        if record.level_requested is None:
            skipped += 1
            continue
        groups.setdefault(record.level_requested, []).append(record)
    if skipped:
        logger.warning("%d record(s) without a requested level were ignored", skipped)
    return dict(sorted(groups.items(), key=lambda item: item[0].value))


def tradeoff_curve(
    records: Sequence[EvaluationRecord],
    levels: Optional[Sequence[FactualityLevel]] = None,
    csv_path=None,
    svg_path=None,
) -> list:
    """One point per level: mean factuality, mean fact count, adherence rate.

    Undefined factuality (empty responses) contributes 0.0 to the mean,
    matching its treatment by the adherence indicator. Requested levels with
    no records are omitted with a warning.
    """
    groups = group_by_level(records)
    if levels is not None:
        for level in levels:
            if level not in groups:
                logger.warning("no records at level %s; omitting from curve", level.key())
        groups = {level: groups[level] for level in levels if level in groups}
    points = []
    for level, group in groups.items():
        n = len(group)
        factuality_sum = 0.0
        fact_count_sum = 0
        for record in group:
            factuality_sum += record.factuality if record.factuality is not None else 0.0
            fact_count_sum += record.fact_count
        points.append(
            TradeoffPoint(
                level=level,
                mean_factuality=factuality_sum / n,
                mean_informativeness=fact_count_sum / n,
                adherence_rate=adherence_rate(group, level),
                n=n,
            )
        )
    if csv_path is not None:
        write_curve_csv(points, csv_path)
    if svg_path is not None:
        write_curve_svg(points, svg_path)
    return points


def write_curve_csv(points: Sequence[TradeoffPoint], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(CURVE_CSV_COLUMNS)]
    for point in points:
        lines.append(
            ",".join(
                (
                    repr(point.level.value),
                    repr(point.mean_factuality),
                    repr(point.mean_informativeness),
                    repr(point.adherence_rate),
                    str(point.n),
                )
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_curve_svg(points: Sequence[TradeoffPoint], path) -> None:
    """Self-contained vector plot: factuality on x, informativeness on y."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "factctl"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [point.mean_factuality for point in points]
    ys = [point.mean_informativeness for point in points]
    ax.plot(xs, ys, marker="o", linewidth=1.5)
    for point, x, y in zip(points, xs, ys):
        ax.annotate(
            f"c={point.level.key()}",
            (x, y),
            textcoords="offset points",
            xytext=(4, 4),
            fontsize=8,
        )
    ax.set_xlabel("mean factuality")
    ax.set_ylabel("mean atomic facts per response")
    ax.set_title("factuality vs. informativeness")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# Adherence report grid
# ---------------------------------------------------------------------------

def format_percent(value: float) -> str:
    return f"{round_half_up(value, 1):.1f}"


def adherence_cell_records(
    records: Sequence[EvaluationRecord], level: FactualityLevel
) -> list:
    """Records contributing to one grid column: those requested at that
    level, plus records carrying no requested level."""
    return [
        record
        for record in records
        if record.level_requested is None or record.level_requested == level
    ]


def format_adherence_grid(
    groups: Mapping[str, Sequence[EvaluationRecord]],
    levels: Sequence[FactualityLevel],
) -> str:
    """Fixed-width text grid: one row per named record set, one column per
    level, cells are adherence rates to one decimal ("-" when no records)."""
    if not groups:
        raise ValidationError("the report grid requires at least one record set")
    headers = [f"c={level.key()}" for level in levels]
    name_width = max(len("method"), *(len(name) for name in groups))
    cell_width = max(8, *(len(header) for header in headers))
    lines = [
        "method".ljust(name_width)
        + "".join(header.rjust(cell_width) for header in headers)
    ]
    for name, records in groups.items():
        cells = []
        for level in levels:
            relevant = adherence_cell_records(records, level)
            if not relevant:
                cells.append("-")
            else:
                cells.append(format_percent(adherence_rate(relevant, level)))
        lines.append(
            name.ljust(name_width) + "".join(cell.rjust(cell_width) for cell in cells)
        )
    return "\n".join(lines) + "\n"


def write_report(path, grid_text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(grid_text, encoding="utf-8", newline="\n")
