"""Answer extraction, verification, judge labeling, and pass@k reports."""

from __future__ import annotations

import sys

import pytest

from guided_sampling.backend import scripted_backend_from_table
from guided_sampling.core import Candidate, VerifierSpec
from guided_sampling.errors import EmptyReportError, QueryError, VerificationError
from guided_sampling.eval import (
    diversity_report,
    extract_boxed,
    extract_concept,
    extract_final_answer,
    extract_mcq_letter,
    normalize_answer,
    normalize_concept_label,
    passk_report,
    verify_candidate,
)


def cand(text: str, qid: str = "q1", idx: int = 1, concept: int | None = 1) -> Candidate:
    return Candidate(question_id=qid, concept_index=concept, sample_index=idx, text=text)


EXACT_42 = VerifierSpec(kind="exact_answer", payload="42")


class TestBoxedExtraction:
    def test_simple(self):
        assert extract_boxed(r"The answer is \boxed{42}.") == "42"

    def test_nested_braces(self):
        assert extract_boxed(r"\boxed{\frac{3}{4}}") == r"\frac{3}{4}"

    def test_last_box_wins(self):
        assert extract_boxed(r"First \boxed{1}, revised: \boxed{2}") == "2"

    def test_unbalanced_is_none(self):
        assert extract_boxed(r"\boxed{42") is None

    def test_absent_is_none(self):
        assert extract_boxed("no boxes here") is None


class TestFinalAnswerExtraction:
    def test_boxed_preferred(self):
        text = "**Final Answer**\n7\nAlso \\boxed{9}"
        assert extract_final_answer(text) == "9"

    def test_marker_fallback(self):
        text = "Working...\n\n**Final Answer**\n(3, \\pi/2)"
        assert extract_final_answer(text) == "(3, \\pi/2)"

    def test_last_marker_wins(self):
        text = "**Final Answer**\nwrong\nmore thoughts\n\n**Final Answer**\nright"
        assert extract_final_answer(text) == "right"

    def test_last_line_fallback(self):
        assert extract_final_answer("steps\nsteps\n42\n") == "42"

    def test_strict_mode_requires_box(self):
        assert extract_final_answer("**Final Answer**\n42", strict_boxed_only=True) is None
        assert extract_final_answer(r"\boxed{42}", strict_boxed_only=True) == "42"

    def test_empty_text_is_none(self):
        assert extract_final_answer("") is None
        assert extract_final_answer("   \n  ") is None


class TestNormalization:
    def test_whitespace_collapsed(self):
        assert normalize_answer("  3  +  4 ") == "3 + 4"

    def test_math_delimiters_stripped(self):
        assert normalize_answer("$42$") == "42"

    def test_frac_rewritten(self):
        assert normalize_answer(r"\frac{3}{4}") == "3/4"
        assert normalize_answer(r"\dfrac{1}{2}") == "1/2"
        assert normalize_answer(r"\tfrac{1}{2}") == "1/2"

    def test_thousands_separators_removed(self):
        assert normalize_answer("1,234,567") == "1234567"

    def test_tuple_commas_survive(self):
        assert normalize_answer("(3, 12)") == "(3, 12)"

    def test_fixpoint_composition(self):
        # delimiter stripping exposes a fraction, which must still rewrite
        assert normalize_answer(r"$\frac{3}{4}$") == "3/4"


class TestMcqExtraction:
    def test_parenthesized(self):
        assert extract_mcq_letter("The answer is (B).") == "B"

    def test_standalone_capital(self):
        assert extract_mcq_letter("Answer: C") == "C"

    def test_last_occurrence_wins(self):
        assert extract_mcq_letter("Maybe (A)... no, final answer (D)") == "D"

    def test_word_letters_ignored(self):
        assert extract_mcq_letter("A rectangle is involved, answer (B)") == "B"

    def test_none_when_absent(self):
        assert extract_mcq_letter("no letters to be found") is None


class TestVerifyCandidate:
    def test_exact_match_correct(self):
        got = verify_candidate(cand(r"Thus \boxed{42}."), EXACT_42)
        assert got.verdict == "correct"
        assert got.extracted_answer == "42"

    def test_exact_mismatch_incorrect(self):
        assert verify_candidate(cand(r"\boxed{41}"), EXACT_42).verdict == "incorrect"

    def test_normalized_comparison(self):
        spec = VerifierSpec(kind="exact_answer", payload="3/4")
        got = verify_candidate(cand("**Final Answer**\n$\\frac{3}{4}$"), spec)
        assert got.verdict == "correct"

    def test_boxed_fraction_comparison(self):
        spec = VerifierSpec(kind="exact_answer", payload="1/2")
        assert verify_candidate(cand(r"so \boxed{\frac{1}{2}}"), spec).verdict == "correct"

    def test_thousands_separator_comparison(self):
        spec = VerifierSpec(kind="exact_answer", payload="1234")
        assert verify_candidate(cand("**Final Answer**\n1,234"), spec).verdict == "correct"

    def test_extraction_failure_is_unverified_not_incorrect(self):
        got = verify_candidate(cand(""), EXACT_42)
        assert got.verdict == "unverified"
        got = verify_candidate(cand("   "), EXACT_42)
        assert got.verdict == "unverified"

    def test_mcq_correct(self):
        spec = VerifierSpec(kind="mcq_letter", payload="B")
        assert verify_candidate(cand("I choose (B)"), spec).verdict == "correct"

    def test_mcq_extraction_failure_unverified(self):
        spec = VerifierSpec(kind="mcq_letter", payload="B")
        assert verify_candidate(cand("i cannot decide"), spec).verdict == "unverified"

    def test_external_command_exit_zero_is_correct(self):
        spec = VerifierSpec(
            kind="external_command",
            payload=f"{sys.executable} -c \"import sys; sys.exit(0 if '42' in sys.stdin.read() else 1)\"",
            timeout=30,
        )
        assert verify_candidate(cand("the answer is 42"), spec).verdict == "correct"
        assert verify_candidate(cand("nothing here"), spec).verdict == "incorrect"

    def test_external_command_timeout_incorrect_with_note(self):
        spec = VerifierSpec(
            kind="external_command",
            payload=f"{sys.executable} -c \"import time; time.sleep(5)\"",
            timeout=1,
        )
        got = verify_candidate(cand("x"), spec)
        assert got.verdict == "incorrect"
        assert "time" in (got.note or "").lower()

    def test_external_command_file_slot(self, tmp_path):
        spec = VerifierSpec(
            kind="external_command",
            payload=f"{sys.executable} {{file}}",
            timeout=30,
        )
        got = verify_candidate(cand("```python\nprint('ok')\n```"), spec)
        assert got.verdict == "correct"
        bad = verify_candidate(cand("```python\nraise SystemExit(3)\n```"), spec)
        assert bad.verdict == "incorrect"


class TestConceptLabelNormalization:
    def test_title_case(self):
        assert normalize_concept_label("pythagorean theorem") == "Pythagorean Theorem"

    def test_small_words_stay_lowercase(self):
        assert normalize_concept_label("area of rectangle") == "Area of Rectangle"
        assert normalize_concept_label("sum of angles in a triangle") == (
            "Sum of Angles in a Triangle"
        )

    def test_small_word_first_is_capitalized(self):
        assert normalize_concept_label("the fundamental theorem of algebra") == (
            "The Fundamental Theorem of Algebra"
        )

    def test_hyphenated_segments(self):
        assert normalize_concept_label("cauchy-schwarz inequality") == "Cauchy-Schwarz Inequality"

    def test_interior_caps_preserved(self):
        assert normalize_concept_label("AM-GM inequality") == "AM-GM Inequality"

    def test_plural_final_word_singularized(self):
        assert normalize_concept_label("least common multiples") == "Least Common Multiple"
        assert normalize_concept_label("pythagorean theorems") == "Pythagorean Theorem"
        # the rule is naive by design: only the trailing 's' of the last word
        assert normalize_concept_label("law of sines") == "Law of Sine"

    def test_acronym_plural_singularized(self):
        assert normalize_concept_label("LCMs") == "LCM"

    def test_short_or_ss_words_not_singularized(self):
        assert normalize_concept_label("loss") == "Loss"
        assert normalize_concept_label("gas") == "Gas"

    def test_surrounding_noise_stripped(self):
        assert normalize_concept_label("  Pythagorean Theorem.  ") == "Pythagorean Theorem"


# fixture solutions use numbers that do not occur in the tagger template's
# own worked examples, so scripted matching keys stay unambiguous
WORKED_SOLUTION_TRIANGLE = (
    "The legs measure 6 cm and 8 cm.\n"
    "hypotenuse = sqrt(6^2 + 8^2) = sqrt(100) = 10 cm\n"
)
WORKED_SOLUTION_RECTANGLE = (
    "The sides measure 7 meters and 3 meters.\n"
    "Area = 7 x 3 = 21 square meters\n"
)


class TestExtractConcept:
    def judge(self):
        return scripted_backend_from_table(
            {
                "contains:sqrt(100)": "pythagorean theorem",
                "contains:7 x 3 = 21": "Area of Rectangle.",
            }
        )

    def test_worked_examples_label_as_expected(self):
        judge = self.judge()
        got1 = extract_concept(cand(WORKED_SOLUTION_TRIANGLE), judge)
        got2 = extract_concept(cand(WORKED_SOLUTION_RECTANGLE), judge)
        assert got1 == "Pythagorean Theorem"
        assert got2 == "Area of Rectangle"

    def test_judge_failure_returns_none(self):
        judge = scripted_backend_from_table({})  # nothing matches, no fallback
        assert extract_concept(cand("some text"), judge) is None

    def test_blank_judge_output_returns_none(self):
        judge = scripted_backend_from_table({"*": "   \n"})
        assert extract_concept(cand("some text"), judge) is None

    def test_cache_avoids_repeat_calls(self):
        judge = self.judge()
        cache: dict = {}
        extract_concept(cand(WORKED_SOLUTION_TRIANGLE), judge, cache=cache)
        extract_concept(cand(WORKED_SOLUTION_TRIANGLE), judge, cache=cache)
        assert len(judge.call_log) == 1

    def test_multiline_judge_output_uses_first_line(self):
        judge = scripted_backend_from_table({"*": "binomial theorem\nbecause it expands powers"})
        assert extract_concept(cand("x"), judge) == "Binomial Theorem"


def labeled(qid: str, labels: list[str | None]) -> list[Candidate]:
    return [
        Candidate(
            question_id=qid,
            concept_index=None,
            sample_index=i + 1,
            text=f"s{i}",
            judge_concept=label,
        )
        for i, label in enumerate(labels)
    ]


class TestDiversityReport:
    def test_distinct_counts_and_histogram(self):
        by_q = {
            "q1": labeled("q1", ["A", "A", "B"]),
            "q2": labeled("q2", ["C", "C", "C"]),
            "q3": labeled("q3", ["D", "E", "F"]),
        }
        report = diversity_report(by_q)
        assert report.per_question["q1"].distinct == 2
        assert report.per_question["q2"].distinct == 1
        assert report.per_question["q3"].distinct == 3
        assert report.histogram == {1: 1, 2: 1, 3: 1}
        assert report.mean_distinct == pytest.approx(2.0)

    def test_unlabeled_candidates_lower_coverage_only(self):
        by_q = {"q1": labeled("q1", ["A", None, "B", None])}
        report = diversity_report(by_q)
        assert report.per_question["q1"].distinct == 2
        assert report.label_coverage == 0.5

    def test_all_unlabeled_is_error(self):
        with pytest.raises(EmptyReportError):
            diversity_report({"q1": labeled("q1", [None, None])})

    def test_frequencies_recorded(self):
        report = diversity_report({"q1": labeled("q1", ["A", "A", "B"])})
        assert report.per_question["q1"].frequencies == {"A": 2, "B": 1}


def verdicts(qid: str, flags: list[bool]) -> list[Candidate]:
    return [
        Candidate(
            question_id=qid,
            concept_index=None,
            sample_index=i + 1,
            text="s",
            verdict="correct" if ok else "incorrect",
        )
        for i, ok in enumerate(flags)
    ]


class TestPassKReport:
    def test_macro_rows(self):
        by_q = {
            "easy": verdicts("easy", [True] * 4),
            "hard": verdicts("hard", [False] * 4),
        }
        report = passk_report(by_q, ks=[1, 2], strategy="rs")
        assert dict(report.rows) == {1: 0.5, 2: 0.5}
        assert report.per_question == {"easy": (4, 4), "hard": (0, 4)}

    def test_csv_shape(self):
        report = passk_report({"q": verdicts("q", [True, False])}, ks=[1], strategy="guided")
        lines = report.to_csv().splitlines()
        assert lines[0] == "k,strategy,pass_at_k"
        assert lines[1] == "1,guided,0.5"

    def test_unverified_candidates_are_an_error_by_default(self):
        bad = [Candidate(question_id="q", concept_index=None, sample_index=1, text="s")]
        with pytest.raises(VerificationError) as err:
            passk_report({"q": bad}, ks=[1], strategy="rs")
        assert "q#1" in err.value.offenders

    def test_exclude_unverified_drops_them(self):
        mixed = verdicts("q", [True, False]) + [
            Candidate(question_id="q", concept_index=None, sample_index=3, text="s")
        ]
        report = passk_report({"q": mixed}, ks=[1], strategy="rs", exclude_unverified=True)
        assert report.per_question == {"q": (1, 2)}
        assert report.metadata["extraction_coverage"] == pytest.approx(2 / 3)

    def test_k_beyond_n_is_error(self):
        with pytest.raises(QueryError):
            passk_report({"q": verdicts("q", [True])}, ks=[2], strategy="rs")

    def test_empty_report_is_error(self):
        with pytest.raises(EmptyReportError):
            passk_report({}, ks=[1], strategy="rs")

    def test_metadata_declares_macro_averaging(self):
        report = passk_report({"q": verdicts("q", [True])}, ks=[1], strategy="rs")
        assert report.metadata["averaging"] == "macro"
