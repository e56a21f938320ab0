from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from polyview.corpus import Document, Domain, Query
from polyview.errors import BackendError, DataError
from polyview.geneval import (
    GeneratedAnswer,
    Judgement,
    JudgedStatement,
    Verdict,
    gen_statements,
    generate_answer,
    generation_metrics,
    generation_template,
    judge_statements,
    parse_judgement,
    parse_statement_list,
    verdict_sums_ok,
)
from polyview.llmgate import MockLlmClient, Reply
from polyview.mixture import RankedEntry, RankedList

DATA = Path(__file__).parent / "data"
Q = Query("q1", Domain.CARE, "dosage", "Can I use both eye drops?", ground_truth="Yes, five minutes apart.")
DOCS = {
    "d1": Document("d1", "q1", "Wait five minutes between drops.", "hospital"),
    "d2": Document("d2", "q1", "Use the lubricant last.", "news"),
}
RANKED = RankedList("q1", "care", (RankedEntry("d1", 0.9, 0), RankedEntry("d2", 0.5, 1)))


class RecordingClient(MockLlmClient):
    """Answers every prompt with one reply and keeps the prompts it saw."""

    def __init__(self, reply):
        super().__init__({})
        self.reply = reply
        self.prompts = []

    def _complete(self, prompt, want_logprobs, max_tokens):
        self.prompts.append(prompt)
        return Reply(self.reply)


# ---------------------------------------------------------------------------
# answers


def test_generate_with_context():
    client = RecordingClient("<|ANSWER|>: Not recommended. Ask a pharmacist.")
    answer = generate_answer(Q, RANKED, client, True, DOCS)
    assert answer.answer_text == "Not recommended. Ask a pharmacist."
    assert answer.used_doc_ids == ("d1", "d2") and not answer.untagged
    (prompt,) = client.prompts
    assert prompt.template_id == "gen_care_ctx"
    assert prompt.user.index("[1] Wait five") < prompt.user.index("[2] Use the lubricant")


def test_generate_without_context_sends_no_documents():
    client = RecordingClient("just text")
    answer = generate_answer(Q, RANKED, client, False, DOCS)
    assert answer.used_doc_ids == () and answer.untagged
    (prompt,) = client.prompts
    assert prompt.template_id == "gen_care_noctx"
    assert not any(d.text in prompt.system + prompt.user for d in DOCS.values())


def test_generate_errors():
    client = RecordingClient("<|ANSWER|>: x")
    with pytest.raises(DataError) as err:
        generate_answer(Q, RankedList("q1", "care"), client, True, DOCS)
    assert err.value.code == "empty_context"
    with pytest.raises(DataError) as err:
        generate_answer(Q, RankedList("q2", "care", RANKED.entries), client, True, DOCS)
    assert err.value.code == "ranking_mismatch"
    with pytest.raises(DataError) as err:
        generate_answer(Q, RANKED, client, True, {"d1": DOCS["d1"]})
    assert err.value.code == "dangling_reference"
    with pytest.raises(BackendError) as err:
        generate_answer(Q, RANKED, RecordingClient("<|ANSWER|>:  "), True, DOCS)
    assert err.value.code == "empty_answer"


def test_generation_templates_per_domain():
    assert generation_template(Domain.POLICY, False) == "gen_policy_noctx"
    assert generation_template(Domain.INQUIRY, True) == "gen_inquiry_ctx"


def test_answer_record_round_trip_and_checks():
    answer = GeneratedAnswer("q1", "text", ("d1",), Domain.CARE)
    assert GeneratedAnswer.from_record(answer.to_record(), Domain.CARE) == answer
    with pytest.raises(DataError):
        GeneratedAnswer("q1", " ", (), Domain.CARE)


# ---------------------------------------------------------------------------
# statements


def test_statement_list_numbered():
    text = (DATA / "judgement_statements.txt").read_text(encoding="utf-8")
    statements = parse_statement_list(text)
    assert len(statements) == 6
    assert statements[0] == "To use for family members, you need to set up family sharing."


def test_statement_list_variants():
    assert parse_statement_list("a\nb\n\nc") == ["a", "b", "c"]
    assert parse_statement_list("Statements:\n1) one\ncontinued\n2、two") == ["one continued", "two"]
    assert parse_statement_list("  \n") == []


def test_gen_statements_empty_reply():
    answer = GeneratedAnswer("q1", "Yes.", (), Domain.CARE)
    with pytest.raises(BackendError) as err:
        gen_statements(Q, answer, RecordingClient("\n\n"))
    assert err.value.code == "no_statements"
    assert gen_statements(Q, answer, RecordingClient("1. Yes.")) == ["Yes."]


# ---------------------------------------------------------------------------
# judgements


def test_single_verdict():
    j = parse_judgement("1. Correct; matches.", ["s"])
    assert j.statements == (JudgedStatement(1, "s", Verdict.CORRECT, "matches."),)


def test_verdict_spellings():
    text = "1. correct: a\n2. NOT MENTIONED，b\n3. Not_mentioned\n4. Incorrect；d"
    j = parse_judgement(text, ["a", "b", "c", "d"])
    assert [s.verdict for s in j.statements] == [Verdict.CORRECT, Verdict.NOT_MENTIONED, Verdict.NOT_MENTIONED, Verdict.INCORRECT]
    assert j.parse_failures == 0


def test_unreadable_lines_are_counted():
    j = parse_judgement("1. Maybe; unsure.\n2. Correct; ok\n2. Incorrect; dup\n9. Correct; out of range", ["a", "b"])
    assert [s.index for s in j.statements] == [2] and j.parse_failures == 3
    with pytest.raises(BackendError) as err:
        judge_statements(Q, Q.ground_truth, ["s"], RecordingClient("1. Maybe; unsure."))
    assert err.value.code == "no_verdicts"


def test_judge_preconditions():
    with pytest.raises(DataError) as err:
        judge_statements(Q, "", ["s"], RecordingClient("1. Correct"))
    assert err.value.code == "missing_ground_truth"
    with pytest.raises(DataError) as err:
        judge_statements(Q, "gt", [], RecordingClient("1. Correct"))
    assert err.value.code == "no_statements"


def test_judge_prompt_numbers_statements():
    client = RecordingClient("1. Correct; x\n2. Incorrect; y")
    j = judge_statements(Q, "gt", ["first", "second"], client)
    assert "1. first\n2. second" in client.prompts[0].user
    assert (j.count(Verdict.CORRECT), j.count(Verdict.INCORRECT)) == (1, 1)


def test_worked_judgement_example():
    statements = parse_statement_list((DATA / "judgement_statements.txt").read_text(encoding="utf-8"))
    j = parse_judgement((DATA / "judgement_reply.txt").read_text(encoding="utf-8"), statements)
    assert [j.count(v) for v in Verdict] == [3, 2, 1]
    assert j.parse_failures == 0
    # wrapped reply lines are folded back into the rationale
    assert "there is no contradiction" in " ".join(j.statements[0].rationale.split())


@given(st.text())
def test_judgement_parse_never_raises(text):
    j = parse_judgement(text, ["a", "b", "c"])
    assert len(j.statements) <= 3


# ---------------------------------------------------------------------------
# aggregation


def judgement(qid, *verdicts, domain=Domain.CARE, failures=0):
    return Judgement(
        qid, domain, tuple(JudgedStatement(i, "s", v, "") for i, v in enumerate(verdicts, start=1)), failures
    )


C, I, N = Verdict.CORRECT, Verdict.INCORRECT, Verdict.NOT_MENTIONED


def test_metrics_worked_example():
    report = generation_metrics([judgement("q1", C, C, C, I, I, N)])
    s = report.overall
    assert (s.n_correct, s.n_incorrect, s.n_not_mentioned) == (3, 2, 1)
    assert (round(s.r_correct, 2), round(s.r_incorrect, 2), round(s.r_not_mentioned, 2)) == (50.0, 33.33, 16.67)
    assert verdict_sums_ok(s)


def test_metrics_all_correct_and_per_query_means():
    assert generation_metrics([judgement("q1", C, C)]).overall.r_correct == 100.0
    report = generation_metrics([judgement("q1", C, C), judgement("q2", C, C, C, C, domain=Domain.POLICY)])
    assert report.overall.n_correct == 3.0
    assert report.overall.r_incorrect == 0.0
    assert set(report.domains) == {"CARE", "POLICY"}
    assert report.domains["POLICY"].n_correct == 4.0


def test_parse_failures_are_reported_not_counted():
    report = generation_metrics([judgement("q1", C, I, failures=2)], skipped_queries=1)
    assert report.overall.total_statements == 2 and report.overall.parse_failures == 2
    assert report.overall.r_correct == 50.0
    assert report.to_record()["skipped_queries"] == 1


def test_metrics_errors():
    with pytest.raises(DataError):
        generation_metrics([])
    with pytest.raises(DataError):
        generation_metrics([judgement("q1")])


@given(st.lists(st.lists(st.sampled_from(list(Verdict)), min_size=1, max_size=6), min_size=1, max_size=6))
def test_metric_sums(per_query):
    report = generation_metrics([judgement(f"q{i}", *vs) for i, vs in enumerate(per_query)])
    assert verdict_sums_ok(report.overall, tol=1e-9)
