import json
from datetime import date, timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyview.corpus import (
    AnnotationSet,
    Corpus,
    CorpusError,
    Document,
    Domain,
    FIXTURE_AUTHORITY,
    Query,
    authority_table_records,
    dumps_jsonl,
    document_to_record,
    extract_publish_date,
    load_authority_table,
    load_corpus,
    parse_document,
    query_to_record,
    synth_authority_table,
    synth_fixture,
    validate_corpus,
    write_corpus,
)
from polyview.corpus import ConflictSpec

REF = date(2025, 1, 1)


def q_rec(qid="q1", **kw):
    return {"id": qid, "domain": "CARE", "intent": "dosage", "text": "Can I use both eye drops?", **kw}


def d_rec(did="d1", qid="q1", **kw):
    return {"id": did, "query_id": qid, "text": "Wait five minutes between drops.", "source": "hospital", **kw}


def write_jsonl(path, records):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def files(tmp_path):
    def make(queries, docs):
        return write_jsonl(tmp_path / "q.jsonl", queries), write_jsonl(tmp_path / "d.jsonl", docs)

    return make


# ---------------------------------------------------------------------------
# loading


def test_load_two_queries_three_docs(files):
    qp, dp = files([q_rec("q1"), q_rec("q2", domain="POLICY")], [d_rec("d1"), d_rec("d2"), d_rec("d3", "q2")])
    corpus = load_corpus(qp, dp, REF)
    assert len(corpus.queries) == 2 and len(corpus.documents) == 3
    assert [d.id for d in corpus.docs_for("q1")] == ["d1", "d2"]
    assert corpus.query("q2").domain is Domain.POLICY


def test_dangling_reference_names_missing_query(files):
    qp, dp = files([q_rec()], [d_rec(), d_rec("d2", "q99")])
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert err.value.code == "dangling_reference" and err.value.line == 2
    assert "q99" in str(err.value)


def test_bad_grade_is_range_error_at_its_line(files):
    qp, dp = files([q_rec()], [d_rec(), d_rec("d2"), d_rec("d3", annotations={"relevance_grade": "F"})])
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert (err.value.code, err.value.line, err.value.field) == ("range_error", 3, "annotations.relevance_grade")
    assert f"{dp}:3: range_error:" in str(err.value)


@pytest.mark.parametrize(
    "record, code, field",
    [
        ([1, 2], "not_an_object", None),
        (d_rec(text=""), "empty_value", "text"),
        (d_rec(text=3), "type_error", "text"),
        ({"id": "d9", "query_id": "q1", "text": "x"}, "missing_field", "source"),
        (d_rec(publish_date="01/02/2024"), "type_error", "publish_date"),
        (d_rec(publish_date="2024-02-30"), "range_error", "publish_date"),
        (d_rec(annotations={"utility": 1.5}), "range_error", "annotations.utility"),
        (d_rec(annotations={"supplement": 2}), "range_error", "annotations.supplement"),
        (d_rec(annotations={"authority_level": -1}), "range_error", "annotations.authority_level"),
        (d_rec(annotations=[]), "type_error", "annotations"),
    ],
)
def test_document_rejections(record, code, field):
    with pytest.raises(CorpusError) as err:
        parse_document(record, path="docs.jsonl", line=7)
    assert err.value.code == code and err.value.field == field and err.value.line == 7


def test_unknown_domain(files):
    qp, dp = files([q_rec(domain="SPORTS")], [d_rec()])
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert err.value.code == "unknown_domain" and err.value.line == 1


def test_duplicate_and_future_and_malformed(tmp_path, files):
    qp, dp = files([q_rec()], [d_rec(), d_rec()])
    with pytest.raises(CorpusError, match="duplicate_id"):
        load_corpus(qp, dp, REF)
    qp, dp = files([q_rec()], [d_rec(publish_date="2025-06-01")])
    with pytest.raises(CorpusError, match="future_date"):
        load_corpus(qp, dp, REF)
    dp.write_bytes(b'{"id": "d1",\n')
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert err.value.code == "malformed_json" and err.value.line == 1
    dp.write_bytes(json.dumps(d_rec()).encode() + b"\n\n\xff\xfe\n")
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert err.value.code == "encoding_error" and err.value.line == 3


def test_over_long_integer_is_malformed_json(files):
    qp, dp = files([q_rec()], [])
    dp.write_bytes(b"1" * 5000 + b"\n")
    with pytest.raises(CorpusError) as err:
        load_corpus(qp, dp, REF)
    assert err.value.code == "malformed_json" and err.value.line == 1


def test_round_trip(tmp_path):
    corpus = synth_fixture(3, 3, 4)
    write_corpus(corpus, tmp_path / "q.jsonl", tmp_path / "d.jsonl")
    again = load_corpus(tmp_path / "q.jsonl", tmp_path / "d.jsonl", corpus.reference_date)
    assert again == corpus


def test_none_fields_are_omitted():
    rec = document_to_record(Document("d", "q", "t", "s"))
    assert rec == {"id": "d", "query_id": "q", "text": "t", "source": "s"}
    assert "ground_truth" not in query_to_record(Query("q", Domain.CARE, "", "t"))
    assert dumps_jsonl([{"t": "é"}]) == '{"t": "é"}\n'


# ---------------------------------------------------------------------------
# validation


def _corpus(docs, queries=(Query("q1", Domain.CARE, "", "text"),)):
    return Corpus(tuple(queries), tuple(docs), REF)


def test_validate_clean_corpus():
    assert validate_corpus(synth_fixture(7, 3, 4)).ok


def test_validate_duplicate_document():
    d = Document("d1", "q1", "t", "s")
    assert validate_corpus(_corpus([d, d])).rules() == ["duplicate_id"]


def test_validate_future_date():
    d = Document("d1", "q1", "t", "s", publish_date=REF + timedelta(days=1))
    assert validate_corpus(_corpus([d])).rules() == ["future_date"]


def test_validate_other_rules():
    docs = [
        Document("d1", "q9", "t", "s"),
        Document("d2", "q1", " ", "s"),
        Document("d3", "q1", "t", "s", annotations=AnnotationSet(utility=2.0)),
    ]
    assert sorted(validate_corpus(_corpus(docs)).rules()) == ["annotation_range", "dangling_reference", "empty_text"]


# ---------------------------------------------------------------------------
# authority table


def test_authority_table_formats(tmp_path):
    text = tmp_path / "auth.txt"
    text.write_text("# source level\ngov 3\nhospital 2\nnews 1\nugc 0\n")
    table = load_authority_table(text)
    assert table.max_level == 3 and table.entries == FIXTURE_AUTHORITY
    jsonl = write_jsonl(tmp_path / "auth.jsonl", authority_table_records(synth_authority_table()))
    assert load_authority_table(jsonl) == synth_authority_table()


def test_authority_table_errors(tmp_path):
    p = tmp_path / "auth.txt"
    p.write_text("")
    with pytest.raises(CorpusError, match="empty_authority_table"):
        load_authority_table(p)
    p.write_text("gov 3\nblog -1\n")
    with pytest.raises(CorpusError) as err:
        load_authority_table(p)
    assert err.value.code == "negative_level" and err.value.line == 2
    p.write_text("gov 3\n")
    with pytest.raises(CorpusError, match="level_above_max"):
        load_authority_table(p, max_level=2)
    p.write_text("gov 3\ngov 2\n")
    with pytest.raises(CorpusError, match="duplicate_id"):
        load_authority_table(p)


def test_unknown_source_gets_default_level():
    assert synth_authority_table().level_of("forum") == 0


# ---------------------------------------------------------------------------
# date extraction


@pytest.mark.parametrize(
    "text, expected",
    [
        ("发布时间：2023-05-01 正文…", date(2023, 5, 1)),
        ("更新于2023年5月1日", date(2023, 5, 1)),
        ("posted 2021/3/7 by admin", date(2021, 3, 7)),
        ("Updated March 3, 2021.", date(2021, 3, 3)),
        ("no dates here", None),
        ("edited 2024-02-30", None),
        ("edited 2024-02-30, re-edited 2024-03-01", None),
        ("serial 12024-01-01", None),
        ("leap day 2024-02-29", date(2024, 2, 29)),
    ],
)
def test_extract_publish_date(text, expected):
    assert extract_publish_date(text) == expected


@settings(max_examples=300, deadline=None)
@given(st.dates(min_value=date(1000, 1, 1), max_value=date(9999, 12, 31)), st.text(max_size=20), st.text(max_size=20))
def test_iso_dates_are_recovered(d, before, after):
    # digit-free surroundings cannot start or extend another date pattern
    before = "".join(c for c in before if not c.isdigit())
    after = "".join(c for c in after if not c.isdigit())
    assert extract_publish_date(f"{before} {d.isoformat()} {after}") == d


@settings(max_examples=300, deadline=None)
@given(st.text())
def test_extractor_never_raises(text):
    found = extract_publish_date(text)
    assert found is None or isinstance(found, date)


# ---------------------------------------------------------------------------
# synthetic fixture


def test_fixture_is_deterministic():
    a, b = synth_fixture(7, 2, 4), synth_fixture(7, 2, 4)
    assert dumps_jsonl(document_to_record(d) for d in a.documents) == dumps_jsonl(document_to_record(d) for d in b.documents)
    assert a != synth_fixture(8, 2, 4)


def test_fixture_authority_conflict_has_one_top_doc():
    corpus = synth_fixture(7, 1, 3, ConflictSpec(authority=True, date=False))
    levels = [d.annotations.authority_level for d in corpus.documents]
    assert levels.count(3) == 1


def test_fixture_conflict_pair_is_equal_except_metadata():
    corpus = synth_fixture(7, 3, 5)
    for q in corpus.queries:
        stale, fresh = corpus.docs_for(q.id)[:2]
        assert stale.text == fresh.text == q.text
        assert stale.annotations.relevance_grade == fresh.annotations.relevance_grade
        assert stale.annotations.utility == fresh.annotations.utility
        assert stale.annotations.supplement == fresh.annotations.supplement
        assert stale.publish_date < fresh.publish_date
        assert stale.annotations.authority_level < fresh.annotations.authority_level
