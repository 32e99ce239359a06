from __future__ import annotations

import json

import pytest

from graphreason.client import ChatClient, MockBackend, ProtocolError, SamplingConfig
from graphreason.codec import STRICT, parse
from graphreason.pipeline import (
    DISCARD_ALL_CANDIDATES_FAILED,
    DISCARD_ANSWER_MISMATCH,
    DISCARD_PARSE_FAILURE,
    BuildReport,
    DiscardRecord,
    PipelineError,
    Provenance,
    SourceFormatError,
    SourceQA,
    TrainingInstance,
    build_dataset,
    build_instance,
    parse_candidates,
    read_instances,
    read_sources,
    split_instances,
    write_dataset,
)


def doc(steps: list[tuple[str, str]], answer: str) -> str:
    lines = ["<reasoning>"]
    for parent, child in steps:
        lines.append(f"<step> {parent} → {child} </step>")
    lines.append("</reasoning>")
    lines.append(f"<answer> {answer} </answer>")
    return "\n".join(lines)


def chain_doc(tag: str, answer: str) -> str:
    return doc([(f"{tag} start", f"{tag} middle"), (f"{tag} middle", f"{tag} end")], answer)


CONFIG = SamplingConfig(model_name="mock-teacher", k=3)


def client_for(replies, **kw) -> ChatClient:
    return ChatClient(MockBackend(replies, **kw), sleep=lambda _: None)


class TestReadSources:
    def test_reads_records(self, tmp_path):
        path = tmp_path / "src.jsonl"
        path.write_text(
            '{"question": "q one", "label": "1", "id": "a"}\n'
            "\n"
            '{"question": "q two", "answer": "2"}\n'
        )
        items = read_sources(path)
        assert [i.source_id for i in items] == ["a", "item-3"]
        assert items[1].label == "2"

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "src.jsonl"
        path.write_text('{"question": "ok", "label": "1"}\n{broken\n')
        with pytest.raises(SourceFormatError, match=r"src\.jsonl:2"):
            read_sources(path)

    def test_missing_label_rejected(self, tmp_path):
        path = tmp_path / "src.jsonl"
        path.write_text('{"question": "ok"}\n')
        with pytest.raises(SourceFormatError, match="label or answer"):
            read_sources(path)

    def test_blank_question_rejected(self, tmp_path):
        path = tmp_path / "src.jsonl"
        path.write_text('{"question": "  ", "label": "1"}\n')
        with pytest.raises(SourceFormatError, match=r"src\.jsonl:1"):
            read_sources(path)


class TestParseCandidates:
    def test_strict_documents_pass(self):
        texts = [chain_doc("a", "1"), chain_doc("b", "2")]
        kept = parse_candidates(texts)
        assert [idx for _, idx in kept] == [0, 1]
        assert [out.answer for out, _ in kept] == ["1", "2"]

    def test_lenient_fallback_logged(self, caplog):
        texts = ["Sure, here you go:\n" + chain_doc("a", "1")]
        with caplog.at_level("WARNING"):
            kept = parse_candidates(texts)
        assert len(kept) == 1
        assert "lenient" in caplog.text

    def test_unparseable_and_missing_skipped(self):
        texts = [None, "no structure at all", chain_doc("a", "1")]
        kept = parse_candidates(texts)
        assert [idx for _, idx in kept] == [2]


ITEM = SourceQA("q1: how many?", "4", "q1")


class TestBuildInstance:
    def test_retained_happy_path(self):
        replies = {"q1:": [chain_doc("a", "4"), chain_doc("b", "4"), chain_doc("c", "5")]}
        result = build_instance(ITEM, client_for(replies), CONFIG)
        assert isinstance(result, TrainingInstance)
        assert result.label == "4"
        parsed = parse(result.graph_text, STRICT)
        assert parsed.answer == "4"
        prov = result.provenance
        assert prov.source_id == "q1"
        assert prov.teacher_model == "mock-teacher"
        assert prov.k_used == 3
        assert prov.contributing_indices == (0, 1)
        assert prov.merge_mode == "deterministic"
        assert prov.fell_back is False

    def test_answer_mismatch_discard(self):
        replies = {"q1:": chain_doc("a", "7")}
        result = build_instance(ITEM, client_for(replies), CONFIG)
        assert result == DiscardRecord(
            "q1", DISCARD_ANSWER_MISMATCH, "merged answer '7' does not match label '4'"
        )

    def test_unparseable_samples_discard(self):
        replies = {"q1:": "I cannot answer in that format."}
        result = build_instance(ITEM, client_for(replies), CONFIG)
        assert isinstance(result, DiscardRecord)
        assert result.reason == DISCARD_ALL_CANDIDATES_FAILED

    def test_transport_failure_discard(self):
        def responder(request):
            raise ProtocolError("down")

        client = ChatClient(MockBackend(responder=responder), sleep=lambda _: None)
        result = build_instance(ITEM, client, CONFIG)
        assert isinstance(result, DiscardRecord)
        assert result.reason == DISCARD_ALL_CANDIDATES_FAILED

    def test_llm_mode_failure_is_parse_failure(self):
        replies = {
            "Candidate reasoning graphs:": "still not a template",
            "q1:": chain_doc("a", "4"),
        }
        result = build_instance(ITEM, client_for(replies), CONFIG, merge_mode="llm")
        assert isinstance(result, DiscardRecord)
        assert result.reason == DISCARD_PARSE_FAILURE

    def test_llm_mode_success(self):
        replies = {
            "Candidate reasoning graphs:": chain_doc("merged", "4"),
            "q1:": chain_doc("a", "4"),
        }
        result = build_instance(ITEM, client_for(replies), CONFIG, merge_mode="llm")
        assert isinstance(result, TrainingInstance)
        assert result.provenance.merge_mode == "llm"
        assert result.provenance.fell_back is False
        assert "merged" in result.graph_text

    def test_fallback_mode_flags_provenance(self):
        replies = {
            "Candidate reasoning graphs:": "still not a template",
            "q1:": chain_doc("a", "4"),
        }
        result = build_instance(
            ITEM, client_for(replies), CONFIG, merge_mode="llm-with-fallback"
        )
        assert isinstance(result, TrainingInstance)
        assert result.provenance.merge_mode == "llm-with-fallback"
        assert result.provenance.fell_back is True

    def test_unknown_merge_mode(self):
        with pytest.raises(ValueError, match="merge_mode"):
            build_instance(ITEM, client_for({}), CONFIG, merge_mode="vote")


def make_instances(n: int) -> list[TrainingInstance]:
    prov = Provenance("s", "m", 3, (0,), "deterministic")
    text = chain_doc("a", "4")
    return [TrainingInstance(f"q{i}", text, "4", prov) for i in range(n)]


class TestSplit:
    def test_ten_items_split_nine_one(self):
        train, valid = split_instances(make_instances(10), seed=42)
        assert (len(train), len(valid)) == (9, 1)

    def test_deterministic_for_seed(self):
        items = make_instances(40)
        first = split_instances(items, seed=42)
        second = split_instances(items, seed=42)
        assert [i.question for i in first[0]] == [i.question for i in second[0]]
        assert [i.question for i in first[1]] == [i.question for i in second[1]]

    def test_seed_changes_membership(self):
        items = make_instances(40)
        _, valid_a = split_instances(items, seed=1)
        _, valid_b = split_instances(items, seed=2)
        assert {i.question for i in valid_a} != {i.question for i in valid_b}

    def test_partition_preserves_order(self):
        items = make_instances(25)
        train, valid = split_instances(items, seed=7)
        questions = [i.question for i in items]
        assert sorted(train + valid, key=lambda i: questions.index(i.question)) == list(items)
        train_pos = [questions.index(i.question) for i in train]
        valid_pos = [questions.index(i.question) for i in valid]
        assert train_pos == sorted(train_pos)
        assert valid_pos == sorted(valid_pos)
        assert set(train_pos).isdisjoint(valid_pos)

    def test_small_corpus_has_no_valid_side(self):
        train, valid = split_instances(make_instances(9), seed=42)
        assert (len(train), len(valid)) == (9, 0)


def corpus_replies() -> dict:
    return {
        "q1:": [chain_doc("a", "4"), chain_doc("b", "4"), chain_doc("c", "5")],
        "q2:": chain_doc("d", "7"),
        "q3:": "prose only, no template",
        "q4:": ["Sure:\n" + chain_doc("e", "9"), chain_doc("f", "9"), chain_doc("g", "9")],
    }


def corpus_items() -> list[SourceQA]:
    return [
        SourceQA("q1: first", "4", "q1"),
        SourceQA("q2: second", "8", "q2"),
        SourceQA("q3: third", "1", "q3"),
        SourceQA("q4: fourth", "9", "q4"),
    ]


class TestBuildDataset:
    def test_accounting_and_order(self):
        result = build_dataset(corpus_items(), client_for(corpus_replies()), CONFIG)
        assert [i.provenance.source_id for i in result.instances] == ["q1", "q4"]
        assert [d.source_id for d in result.discards] == ["q2", "q3"]
        report = result.report
        assert report.total_in == 4
        assert report.retained == 2
        assert report.discarded_by_reason == {
            DISCARD_ANSWER_MISMATCH: 1,
            DISCARD_ALL_CANDIDATES_FAILED: 1,
        }
        assert report.split_sizes == {"train": 2, "valid": 0}

    def test_serial_and_parallel_agree(self):
        serial = build_dataset(
            corpus_items(), client_for(corpus_replies()), CONFIG, workers=1
        )
        parallel = build_dataset(
            corpus_items(), client_for(corpus_replies()), CONFIG, workers=4
        )
        assert [i.to_dict() for i in serial.instances] == [
            i.to_dict() for i in parallel.instances
        ]
        assert serial.report.to_dict() == parallel.report.to_dict()

    def test_duplicate_source_ids_rejected(self):
        items = [SourceQA("q one", "1", "dup"), SourceQA("q two", "2", "dup")]
        with pytest.raises(PipelineError, match="unique"):
            build_dataset(items, client_for({}), CONFIG)

    def test_empty_input(self):
        result = build_dataset([], client_for({}), CONFIG)
        assert result.report.total_in == 0
        assert result.report.split_sizes == {"train": 0, "valid": 0}


class TestWriteDataset:
    def test_files_round_trip(self, tmp_path):
        result = build_dataset(corpus_items(), client_for(corpus_replies()), CONFIG)
        paths = write_dataset(result, tmp_path / "out")
        assert read_instances(paths["train"]) == result.train
        assert read_instances(paths["valid"]) == result.valid
        report = json.loads(paths["report"].read_text())
        assert report["total_in"] == 4
        assert report["split_sizes"] == {"train": 2, "valid": 0}
        assert [d["source_id"] for d in report["discards"]] == ["q2", "q3"]

    def test_rows_carry_expected_fields(self, tmp_path):
        result = build_dataset(corpus_items(), client_for(corpus_replies()), CONFIG)
        paths = write_dataset(result, tmp_path / "out")
        row = json.loads(paths["train"].read_text().splitlines()[0])
        assert set(row) == {"question", "graph_reasoning", "label", "provenance"}
        parse(row["graph_reasoning"], STRICT)

    def test_no_timestamps_and_no_leftover_tmp(self, tmp_path):
        result = build_dataset(corpus_items(), client_for(corpus_replies()), CONFIG)
        out = tmp_path / "out"
        write_dataset(result, out)
        names = sorted(p.name for p in out.iterdir())
        assert names == ["report.json", "train.jsonl", "valid.jsonl"]
        for p in out.iterdir():
            text = p.read_text().lower()
            assert "timestamp" not in text
            assert "latency" not in text

    def test_report_without_discard_detail(self, tmp_path):
        result = build_dataset(corpus_items(), client_for(corpus_replies()), CONFIG)
        paths = write_dataset(result, tmp_path / "out", include_discards=False)
        assert "discards" not in json.loads(paths["report"].read_text())

    def test_read_instances_rejects_bad_rows(self, tmp_path):
        path = tmp_path / "train.jsonl"
        path.write_text('{"question": "q"}\n')
        with pytest.raises(SourceFormatError, match=r"train\.jsonl:1"):
            read_instances(path)


class TestBuildReport:
    def test_accounting_identity_enforced(self):
        with pytest.raises(ValueError, match="accounting"):
            BuildReport(10, 8, {"answer-mismatch": 1}, {})

    def test_split_sum_enforced(self):
        with pytest.raises(ValueError, match="split"):
            BuildReport(3, 3, {}, {"train": 1, "valid": 1})

    def test_discard_reason_vocabulary(self):
        with pytest.raises(ValueError, match="discard reason"):
            DiscardRecord("s", "because")
