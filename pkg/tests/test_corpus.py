import io
import json
import random

import pytest

from pathcl.corpus import (
    CorpusError,
    Document,
    Entity,
    Mention,
    RelationTriple,
    Sentence,
    document_to_record,
    parse_corpus,
    parse_record,
    sentence_entities,
    validate_document,
    write_corpus,
)

from corpora import film_cast_document, random_micro_doc

MINIMAL = {
    "id": "d0",
    "sentences": [{"text": "A met B."}],
    "entities": [
        {"id": "a", "name": "A", "mentions": [{"sent": 0, "start": 0, "end": 1}]},
        {"id": "b", "name": "B", "mentions": [{"sent": 0, "start": 6, "end": 7}]},
    ],
    "relations": [],
}


def record_line(obj) -> str:
    return json.dumps(obj) + "\n"


def test_parse_minimal_record():
    docs = list(parse_corpus([record_line(MINIMAL)]))
    assert len(docs) == 1
    doc = docs[0]
    assert len(doc.entities) == 2
    assert len(doc.sentences) == 1
    assert doc.sentences[0].text == "A met B."


def test_parse_empty_stream():
    assert list(parse_corpus([])) == []
    assert list(parse_corpus(["", "   \n"])) == []


def test_parse_bad_span_names_mention():
    bad = json.loads(json.dumps(MINIMAL))
    bad["entities"][1]["mentions"][0]["end"] = 99
    errors: list[CorpusError] = []
    docs = list(parse_corpus([record_line(bad)], errors))
    assert docs == []
    assert len(errors) == 1
    assert errors[0].line == 1
    assert "mentions[0]" in str(errors[0])
    assert "'b'" in str(errors[0])


def test_parse_recovers_per_line():
    lines = [record_line(MINIMAL), "not json\n", record_line({**MINIMAL, "id": "d1"})]
    errors: list[CorpusError] = []
    docs = list(parse_corpus(lines, errors))
    assert [d.id for d in docs] == ["d0", "d1"]
    assert [e.line for e in errors] == [2]


def test_parse_strict_raises():
    with pytest.raises(CorpusError) as exc:
        list(parse_corpus(["{}"]))
    assert exc.value.line == 1
    assert "id" in str(exc.value)


def test_missing_field_path():
    bad = json.loads(json.dumps(MINIMAL))
    del bad["entities"][0]["mentions"]
    with pytest.raises(CorpusError) as exc:
        parse_record(bad, 7)
    assert exc.value.line == 7
    assert exc.value.field == "entities[0].mentions"


def test_validate_well_formed():
    assert validate_document(film_cast_document()) == []


def test_validate_unknown_relation_entity():
    doc = film_cast_document()
    bad = Document(
        id=doc.id,
        sentences=doc.sentences,
        entities=doc.entities,
        relations=doc.relations + (RelationTriple("e1", "zzz", "x"),),
    )
    problems = validate_document(bad)
    assert len(problems) == 1
    assert "zzz" in problems[0]


def test_validate_duplicate_entity_id():
    doc = film_cast_document()
    dup = doc.entities[0]
    bad = Document(
        id=doc.id,
        sentences=doc.sentences,
        entities=doc.entities + (dup,),
        relations=doc.relations,
    )
    problems = validate_document(bad)
    assert any("duplicate" in p for p in problems)


def test_validate_overlapping_mentions():
    sent = Sentence(0, "Alpha Beta")
    bad = Document(
        id="d",
        sentences=(sent,),
        entities=(
            Entity("a", "Alpha", (Mention(0, 0, 7),)),
            Entity("b", "Beta", (Mention(0, 6, 10),)),
        ),
        relations=(),
    )
    problems = validate_document(bad)
    assert any("overlaps" in p for p in problems)


def test_validate_self_relation():
    doc = Document(
        id="d",
        sentences=(Sentence(0, "A"),),
        entities=(Entity("a", "A", (Mention(0, 0, 1),)),),
        relations=(RelationTriple("a", "a", "loop"),),
    )
    assert any("self-relation" in p for p in validate_document(doc))


def test_sentence_entities():
    doc = film_cast_document()
    assert sentence_entities(doc, 1) == {"e1", "e3"}
    assert sentence_entities(doc, 4) == frozenset()
    assert sentence_entities(doc, 3) == {"e1", "e2"}
    with pytest.raises(IndexError):
        sentence_entities(doc, 6)


def test_sentence_entities_deduplicates():
    doc = Document(
        id="d",
        sentences=(Sentence(0, "A and A met B."),),
        entities=(
            Entity("a", "A", (Mention(0, 0, 1), Mention(0, 6, 7))),
            Entity("b", "B", (Mention(0, 12, 13),)),
        ),
        relations=(),
    )
    assert validate_document(doc) == []
    assert sentence_entities(doc, 0) == {"a", "b"}


def test_round_trip_identity():
    rng = random.Random(11)
    docs = [film_cast_document()] + [random_micro_doc(rng, f"m{i}") for i in range(25)]
    buf = io.StringIO()
    assert write_corpus(docs, buf) == len(docs)
    buf.seek(0)
    parsed = list(parse_corpus(buf))
    assert parsed == docs


def test_parsed_documents_validate():
    rng = random.Random(3)
    docs = [random_micro_doc(rng, f"m{i}") for i in range(30)]
    for doc in docs:
        assert validate_document(doc) == []
        round_tripped = parse_record(document_to_record(doc))
        assert validate_document(round_tripped) == []
        for k in range(len(doc.sentences)):
            assert sentence_entities(doc, k) <= set(doc.entity_index)
