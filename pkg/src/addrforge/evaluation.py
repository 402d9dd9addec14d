"""Answer parsing, scoring, and the address-localization metric suite.

Accuracies are tracked per (level, question type) with exact integer
counts. Averages are reported both macro (unweighted mean of category
accuracies) and micro (pooled counts), since the two can differ when
category sizes differ.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .geo_model import Gazetteer, normalize_address

QTYPES = ("generation", "judgment", "multiple_choice")
LEVELS = ("district", "street")

_YESNO_RE = re.compile(r"(?<![a-z])(yes|no)(?![a-z])", re.IGNORECASE)
# Uppercase only: a lowercase standalone "a" is almost always the article.
_LETTER_RE = re.compile(r"(?<![A-Za-z])([ABCD])(?![A-Za-z])")


@dataclass(frozen=True)
class ParsedAnswer:
    qtype: str
    text: str
    yesno: Optional[str] = None  # "yes" | "no"
    letter: Optional[str] = None  # "A".."D"
    street: Optional[str] = None  # combined extraction
    district: Optional[str] = None

    @property
    def parsed_ok(self) -> bool:
        if self.qtype == "judgment":
            return self.yesno is not None
        if self.qtype == "multiple_choice":
            return self.letter is not None
        return True


def parse_answer(raw: str, qtype: str, gazetteer: Optional[Gazetteer] = None,
                 level: str = "street") -> ParsedAnswer:
    """Extract the scoreable payload from a raw model answer.

    judgment: first standalone yes/no token. multiple_choice: first
    standalone uppercase letter A-D (covers "(A)", "Answer: A", "B) ...").
    generation: full text. combined (level="combined"): street and district
    resolved from gazetteer entries appearing in the normalized text.
    """
    if not raw:
        raise ValueError("empty raw answer")
    if qtype == "judgment":
        m = _YESNO_RE.search(raw)
        return ParsedAnswer(qtype=qtype, text=raw, yesno=m.group(1).lower() if m else None)
    if qtype == "multiple_choice":
        m = _LETTER_RE.search(raw)
        return ParsedAnswer(qtype=qtype, text=raw, letter=m.group(1) if m else None)
    if qtype == "generation" and level == "combined":
        if gazetteer is None:
            raise ValueError("combined parsing needs a gazetteer")
        return ParsedAnswer(
            qtype=qtype,
            text=raw,
            street=gazetteer.extract(raw, "street"),
            district=gazetteer.extract(raw, "district"),
        )
    return ParsedAnswer(qtype=qtype, text=raw)


def score_question(parsed: ParsedAnswer, meta: dict, gazetteer: Gazetteer) -> bool:
    """Score one parsed answer against its turn meta.

    generation: normalized equality with truth, gazetteer lookup of the full
    answer, or a unique gazetteer mention inside the answer (handles
    sentence-embedded answers). judgment/multiple_choice: payload equality.
    combined: both street and district must resolve to their truths.
    """
    level = meta["level"]
    qtype = meta["qtype"]
    truth = meta["truth"]
    if level == "combined":
        if parsed.street is None or parsed.district is None:
            return False
        return (
            _same(parsed.street, truth["street"], "street")
            and _same(parsed.district, truth["district"], "district")
        )
    if qtype == "generation":
        target = truth["name"]
        try:
            if normalize_address(parsed.text, level) == normalize_address(target, level):
                return True
        except ValueError:
            return False
        looked = gazetteer.lookup(parsed.text, level)
        if looked is not None:
            return _same(looked, target, level)
        mention = gazetteer.extract(parsed.text, level)
        return mention is not None and _same(mention, target, level)
    if qtype == "judgment":
        return parsed.yesno == truth["expected"]
    if qtype == "multiple_choice":
        return parsed.letter == truth["letter"]
    raise ValueError(f"unknown qtype {qtype!r}")


def _same(a: str, b: str, level: str) -> bool:
    return normalize_address(a, level) == normalize_address(b, level)


@dataclass(frozen=True)
class Accuracy:
    correct: int
    total: int

    @property
    def pct(self) -> Optional[float]:
        if self.total == 0:
            return None
        return 100.0 * self.correct / self.total


@dataclass
class MetricsReport:
    categories: dict[tuple[str, str], Accuracy]  # (level, qtype) -> counts
    combined: Accuracy  # A_sd
    unparsable: int

    def category(self, level: str, qtype: str) -> Accuracy:
        return self.categories.get((level, qtype), Accuracy(0, 0))

    def macro_level(self, level: str) -> Optional[float]:
        vals = [self.category(level, q).pct for q in QTYPES]
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    def micro_level(self, level: str) -> Optional[float]:
        c = sum(self.category(level, q).correct for q in QTYPES)
        t = sum(self.category(level, q).total for q in QTYPES)
        return 100.0 * c / t if t else None

    def macro_overall(self) -> Optional[float]:
        vals = [self.category(lv, q).pct for lv in LEVELS for q in QTYPES]
        vals = [v for v in vals if v is not None]
        return sum(vals) / len(vals) if vals else None

    def micro_overall(self) -> Optional[float]:
        c = sum(self.category(lv, q).correct for lv in LEVELS for q in QTYPES)
        t = sum(self.category(lv, q).total for lv in LEVELS for q in QTYPES)
        return 100.0 * c / t if t else None


@dataclass(frozen=True)
class ScoredQuestion:
    level: str
    qtype: str
    correct: bool
    parsed_ok: bool = True


def aggregate(scored: Iterable[ScoredQuestion]) -> MetricsReport:
    """Fold scored questions into the report; order-independent."""
    cats: dict[tuple[str, str], list[int]] = {}
    combined = [0, 0]
    unparsable = 0
    for rec in scored:
        if not rec.parsed_ok:
            unparsable += 1
        if rec.level == "combined":
            combined[0] += int(rec.correct)
            combined[1] += 1
            continue
        c = cats.setdefault((rec.level, rec.qtype), [0, 0])
        c[0] += int(rec.correct)
        c[1] += 1
    return MetricsReport(
        categories={k: Accuracy(v[0], v[1]) for k, v in sorted(cats.items())},
        combined=Accuracy(combined[0], combined[1]),
        unparsable=unparsable,
    )


def evaluate_predictions(
    predictions: Iterable[dict],
    ground_truth: dict[str, dict],
    gazetteers: dict[str, Gazetteer] | Gazetteer,
) -> MetricsReport:
    """Join {id, turn, answer} prediction records against forge test samples
    and aggregate. With per-city gazetteers, each sample resolves against
    its own city (the id prefix before the first '/')."""
    scored: list[ScoredQuestion] = []
    for rec in predictions:
        sid = rec["id"]
        turn_idx = int(rec["turn"])
        sample = ground_truth.get(sid)
        if sample is None:
            raise KeyError(f"prediction for unknown sample id {sid!r}")
        meta = sample["meta"]["turns"][turn_idx]
        if isinstance(gazetteers, Gazetteer):
            gaz = gazetteers
        else:
            city = sid.split("/", 1)[0]
            gaz = gazetteers[city]
        parsed = parse_answer(rec["answer"], meta["qtype"], gazetteer=gaz, level=meta["level"])
        correct = score_question(parsed, meta, gaz)
        scored.append(
            ScoredQuestion(
                level=meta["level"], qtype=meta["qtype"],
                correct=correct, parsed_ok=parsed.parsed_ok,
            )
        )
    return aggregate(scored)


# Column order of the report table.
COLUMNS = (
    ("A_d^G", ("district", "generation")),
    ("A_d^J", ("district", "judgment")),
    ("A_d^M", ("district", "multiple_choice")),
    ("Abar_d", None),
    ("A_s^G", ("street", "generation")),
    ("A_s^J", ("street", "judgment")),
    ("A_s^M", ("street", "multiple_choice")),
    ("Abar_s", None),
    ("Abar", None),
    ("A_sd", None),
)


def _fmt(v: Optional[float]) -> str:
    return "—" if v is None else f"{v:.2f}"


def report_values(report: MetricsReport, averaging: str = "micro") -> dict[str, Optional[float]]:
    avg_level = report.micro_level if averaging == "micro" else report.macro_level
    avg_all = report.micro_overall if averaging == "micro" else report.macro_overall
    return {
        "A_d^G": report.category("district", "generation").pct,
        "A_d^J": report.category("district", "judgment").pct,
        "A_d^M": report.category("district", "multiple_choice").pct,
        "Abar_d": avg_level("district"),
        "A_s^G": report.category("street", "generation").pct,
        "A_s^J": report.category("street", "judgment").pct,
        "A_s^M": report.category("street", "multiple_choice").pct,
        "Abar_s": avg_level("street"),
        "Abar": avg_all(),
        "A_sd": report.combined.pct,
    }


def render_report(report: MetricsReport) -> str:
    """Aligned text table, one row per averaging variant."""
    headers = [name for name, _ in COLUMNS]
    rows = []
    for averaging in ("micro", "macro"):
        vals = report_values(report, averaging)
        rows.append([averaging] + [_fmt(vals[h]) for h in headers])
    widths = [max(len(str(cell)) for cell in col) for col in zip(["avg"] + headers, *rows)]
    def line(cells):
        return "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))
    out = [line(["avg"] + headers)]
    out.extend(line(r) for r in rows)
    out.append(f"unparsable: {report.unparsable}")
    return "\n".join(out)


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "categories": {
            f"{level}/{qtype}": {"correct": acc.correct, "total": acc.total}
            for (level, qtype), acc in report.categories.items()
        },
        "combined": {"correct": report.combined.correct, "total": report.combined.total},
        "unparsable": report.unparsable,
        "micro": report_values(report, "micro"),
        "macro": report_values(report, "macro"),
    }


def report_from_dict(doc: dict) -> MetricsReport:
    cats = {}
    for key, val in doc["categories"].items():
        level, qtype = key.split("/")
        cats[(level, qtype)] = Accuracy(val["correct"], val["total"])
    return MetricsReport(
        categories=cats,
        combined=Accuracy(doc["combined"]["correct"], doc["combined"]["total"]),
        unparsable=doc["unparsable"],
    )


def save_report(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def load_report(path: str | Path) -> MetricsReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
