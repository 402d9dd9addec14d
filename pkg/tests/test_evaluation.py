import random

import pytest

from addrforge.geo_model import Gazetteer, normalize_address
from addrforge.evaluation import (
    ScoredQuestion,
    aggregate,
    evaluate_predictions,
    load_report,
    parse_answer,
    render_report,
    report_from_dict,
    report_to_dict,
    save_report,
    score_question,
)

GAZ = Gazetteer(
    streets=["Grant Street", "Fifth Avenue", "Penn Avenue", "Liberty Avenue"],
    districts=["Downtown", "Northside", "Shadyside", "Oakland"],
)


# (raw, qtype, level, expected payload) — hand-built truth table for messy output
PARSER_FIXTURE = [
    ("Yes.", "judgment", "street", ("yesno", "yes")),
    ("no, it is not", "judgment", "street", ("yesno", "no")),
    ("I believe the answer is Yes", "judgment", "district", ("yesno", "yes")),
    ("NO", "judgment", "district", ("yesno", "no")),
    ("Yesterday it was", "judgment", "street", ("yesno", None)),  # no standalone token
    ("definitely", "judgment", "street", ("yesno", None)),
    ("The answer is (C)", "multiple_choice", "street", ("letter", "C")),
    ("B) Fifth Avenue", "multiple_choice", "street", ("letter", "B")),
    ("I think A", "multiple_choice", "district", ("letter", "A")),
    ("Answer: D", "multiple_choice", "district", ("letter", "D")),
    ("a street in the city", "multiple_choice", "street", ("letter", None)),  # lowercase article
    ("Probably E", "multiple_choice", "street", ("letter", None)),
    ("ABCD", "multiple_choice", "street", ("letter", None)),  # not standalone
    ("grant st", "generation", "street", ("text", "grant st")),
    ("It's Fifth Avenue.", "generation", "street", ("text", "It's Fifth Avenue.")),
    ("DOWNTOWN", "generation", "district", ("text", "DOWNTOWN")),
    ("Grant Street, Downtown", "generation", "combined", ("pair", ("Grant Street", "Downtown"))),
    ("Taken on Penn Ave in Oakland.", "generation", "combined", ("pair", ("Penn Avenue", "Oakland"))),
    ("somewhere nice", "generation", "combined", ("pair", (None, None))),
    ("The district is Shadyside, street unknown", "generation", "combined", ("pair", (None, "Shadyside"))),
]


class TestParseAnswer:
    @pytest.mark.parametrize("raw,qtype,level,expected", PARSER_FIXTURE)
    def test_messy_fixture(self, raw, qtype, level, expected):
        parsed = parse_answer(raw, qtype, gazetteer=GAZ, level=level)
        kind, value = expected
        if kind == "yesno":
            assert parsed.yesno == value
        elif kind == "letter":
            assert parsed.letter == value
        elif kind == "text":
            assert parsed.text == value
        else:
            assert (parsed.street, parsed.district) == value

    def test_empty_raw_errors(self):
        with pytest.raises(ValueError):
            parse_answer("", "judgment")

    def test_unparsable_flag(self):
        assert not parse_answer("dunno", "judgment").parsed_ok
        assert not parse_answer("dunno", "multiple_choice").parsed_ok
        assert parse_answer("dunno", "generation").parsed_ok


def meta(qtype, level, **truth):
    return {"qtype": qtype, "level": level, "truth": truth}


class TestScoreQuestion:
    def test_generation_abbreviation(self):
        parsed = parse_answer("grant st", "generation")
        assert score_question(parsed, meta("generation", "street", name="Grant Street"), GAZ)

    def test_generation_sentence_embedded(self):
        parsed = parse_answer("The photo was taken on Grant Street.", "generation")
        assert score_question(parsed, meta("generation", "street", name="Grant Street"), GAZ)

    def test_generation_wrong(self):
        parsed = parse_answer("Penn Avenue", "generation")
        assert not score_question(parsed, meta("generation", "street", name="Grant Street"), GAZ)

    def test_combined_is_conjunctive(self):
        m = meta("generation", "combined", street="Grant Street", district="Downtown")
        right = parse_answer("Grant Street, Downtown", "generation", GAZ, "combined")
        street_only = parse_answer("Grant Street, Northside", "generation", GAZ, "combined")
        assert score_question(right, m, GAZ)
        assert not score_question(street_only, m, GAZ)

    def test_judgment_and_choice(self):
        assert score_question(
            parse_answer("Yes", "judgment"), meta("judgment", "street", expected="yes",
                                                  candidate="Grant Street"), GAZ
        )
        assert not score_question(
            parse_answer("Yes", "judgment"), meta("judgment", "street", expected="no",
                                                  candidate="Penn Avenue"), GAZ
        )
        assert score_question(
            parse_answer("(B)", "multiple_choice"), meta("multiple_choice", "street",
                                                         letter="B", name="Grant Street"), GAZ
        )

    def test_dual_implementation_oracle(self):
        # DERIVED oracle: independent re-implementation of the scoring rules
        rng = random.Random(17)
        streets = list(GAZ.streets)
        districts = list(GAZ.districts)
        for _ in range(1000):
            qtype = rng.choice(["generation", "judgment", "multiple_choice"])
            level = rng.choice(["street", "district"])
            pool = streets if level == "street" else districts
            truth_name = rng.choice(pool)
            if qtype == "generation":
                answer = rng.choice([truth_name, truth_name.upper(), rng.choice(pool)])
                m = meta("generation", level, name=truth_name)
                expected = normalize_address(answer, level) == normalize_address(
                    truth_name, level
                )
            elif qtype == "judgment":
                expected_token = rng.choice(["yes", "no"])
                answer = rng.choice(["Yes", "No", "maybe"])
                m = meta("judgment", level, expected=expected_token, candidate=truth_name)
                expected = answer.lower() == expected_token
            else:
                letter = rng.choice("ABCD")
                answer = rng.choice(["A", "B", "C", "D", "huh"])
                m = meta("multiple_choice", level, letter=letter, name=truth_name)
                expected = answer == letter
            parsed = parse_answer(answer, qtype, GAZ, level)
            assert score_question(parsed, m, GAZ) == expected


class TestAggregate:
    FOUR = [
        ScoredQuestion("district", "generation", True),
        ScoredQuestion("district", "judgment", False),
        ScoredQuestion("street", "generation", True),
        ScoredQuestion("street", "multiple_choice", True),
    ]

    def test_four_question_fixture(self):
        report = aggregate(self.FOUR)
        assert report.category("district", "generation").pct == 100.0
        assert report.category("district", "judgment").pct == 0.0
        assert report.category("street", "generation").pct == 100.0
        assert report.category("street", "multiple_choice").pct == 100.0
        assert report.micro_overall() == 75.0

    def test_saturation(self):
        scored = [
            ScoredQuestion(level, qtype, True)
            for level in ("district", "street")
            for qtype in ("generation", "judgment", "multiple_choice")
        ] + [ScoredQuestion("combined", "generation", True)]
        report = aggregate(scored)
        assert report.micro_overall() == 100.0
        assert report.macro_overall() == 100.0
        assert report.combined.pct == 100.0

    def test_absent_category_is_none_not_zero(self):
        report = aggregate([ScoredQuestion("district", "generation", True)])
        assert report.category("street", "judgment").pct is None
        assert "—" in render_report(report)

    def test_order_independence(self):
        rng = random.Random(23)
        scored = [
            ScoredQuestion(
                rng.choice(["district", "street", "combined"]),
                rng.choice(["generation", "judgment", "multiple_choice"]),
                rng.random() < 0.7,
            )
            for _ in range(500)
        ]
        shuffled = scored[:]
        rng.shuffle(shuffled)
        assert report_to_dict(aggregate(scored)) == report_to_dict(aggregate(shuffled))

    def test_micro_is_pooled_counts(self):
        rng = random.Random(31)
        scored = [
            ScoredQuestion(
                rng.choice(["district", "street"]),
                rng.choice(["generation", "judgment", "multiple_choice"]),
                rng.random() < 0.6,
            )
            for _ in range(400)
        ]
        report = aggregate(scored)
        correct = sum(s.correct for s in scored)
        assert report.micro_overall() == pytest.approx(100.0 * correct / 400)


class TestReportIO:
    def test_round_trip(self, tmp_path):
        report = aggregate(TestAggregate.FOUR)
        path = tmp_path / "report.json"
        save_report(report, path)
        loaded = load_report(path)
        assert report_to_dict(loaded) == report_to_dict(report)

    def test_table_column_order(self):
        report = aggregate(TestAggregate.FOUR)
        header = render_report(report).splitlines()[0]
        cols = header.split()
        assert cols[1:] == [
            "A_d^G", "A_d^J", "A_d^M", "Abar_d",
            "A_s^G", "A_s^J", "A_s^M", "Abar_s", "Abar", "A_sd",
        ]

    def test_unparsable_visible(self):
        report = aggregate([ScoredQuestion("street", "judgment", False, parsed_ok=False)])
        assert "unparsable: 1" in render_report(report)


class TestEvaluatePredictions:
    def test_joins_by_id_and_turn(self):
        gt = {
            "c/s1/0": {
                "id": "c/s1/0",
                "meta": {"turns": [
                    {"qtype": "generation", "level": "street", "truth": {"name": "Grant Street"}},
                    {"qtype": "judgment", "level": "district",
                     "truth": {"expected": "yes", "candidate": "Downtown"}},
                ]},
            }
        }
        preds = [
            {"id": "c/s1/0", "turn": 0, "answer": "grant st"},
            {"id": "c/s1/0", "turn": 1, "answer": "No"},
        ]
        report = evaluate_predictions(preds, gt, {"c": GAZ})
        assert report.category("street", "generation").correct == 1
        assert report.category("district", "judgment").correct == 0

    def test_unknown_id_errors(self):
        with pytest.raises(KeyError):
            evaluate_predictions([{"id": "x", "turn": 0, "answer": "hi"}], {}, GAZ)
