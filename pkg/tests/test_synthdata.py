"""Corpus generator ground truth and dataset file round trips."""

import hashlib
import math

import numpy as np
import pytest

from mlva.errors import ConfigError, DataError, ParseError
from mlva.synthdata import (
    CorpusSpec,
    Sample,
    Vocabulary,
    generate_corpus,
    make_concepts,
    read_dataset,
    write_dataset,
)
from mlva.tasks import QaAnnotation, SpanAnnotation

SMALL = dict(n_concepts=6, n_train=12, n_test=4, frames_per_video=8,
             segments_per_video=2, vocab_size=26, static_dim=4, motion_dim=3)


class TestSpecValidation:
    def test_too_many_candidates_rejected(self):
        with pytest.raises(ConfigError):
            CorpusSpec(task="qa", n_candidates=20, n_concepts=8, **{
                k: v for k, v in SMALL.items() if k != "n_concepts"})

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            CorpusSpec(noise_sigma=-0.1)

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigError):
            CorpusSpec(task="captioning")

    def test_retrieval_capacity_check(self):
        with pytest.raises(ConfigError):
            CorpusSpec(task="retrieval", n_concepts=3, segments_per_video=2,
                       n_train=100, n_test=10, frames_per_video=8,
                       vocab_size=20, static_dim=4, motion_dim=3)


class TestConcepts:
    def test_prototypes_well_separated_and_vocab_disjoint(self):
        spec = CorpusSpec(task="retrieval", **SMALL)
        concepts = make_concepts(spec, np.random.default_rng(0))
        cos_cap = math.cos(math.radians(10.0))
        for i in range(len(concepts)):
            for j in range(i + 1, len(concepts)):
                pi, pj = concepts[i].prototype, concepts[j].prototype
                cos = abs(float(np.dot(pi, pj)))
                cos /= np.linalg.norm(pi) * np.linalg.norm(pj)
                assert cos < cos_cap
                assert not (set(concepts[i].tokens) & set(concepts[j].tokens))
        for c in concepts:
            assert min(c.tokens) >= 2  # 0/1 reserved for pad/sep


class TestGenerator:
    def test_zero_noise_frames_equal_prototype(self):
        spec = CorpusSpec(task="qa", noise_sigma=0.0, n_candidates=3, **SMALL)
        train, _, _ = generate_corpus(spec)
        concepts = make_concepts(spec, np.random.default_rng(spec.seed))
        protos = np.stack([c.prototype for c in concepts])
        for sample in train[:5]:
            for frame in sample.frames:
                assert any(np.array_equal(frame, p) for p in protos)

    def test_same_seed_bitwise_identical(self):
        spec = CorpusSpec(task="qa", n_candidates=3, **SMALL)
        a_train, a_test, _ = generate_corpus(spec)
        b_train, b_test, _ = generate_corpus(spec)
        for a, b in zip(a_train + a_test, b_train + b_test):
            assert a.id == b.id
            np.testing.assert_array_equal(a.frames, b.frames)
            assert a.tokens == b.tokens

    def test_nearest_prototype_recovers_concepts_at_zero_noise(self):
        spec = CorpusSpec(task="moment", noise_sigma=0.0, **SMALL)
        train, test, _ = generate_corpus(spec)
        # oracle on raw features: classify each frame by most similar
        # prototype, check the queried span's frames agree with the
        # query's concept vocabulary
        concepts = make_concepts(spec, np.random.default_rng(spec.seed))
        protos = np.stack([c.prototype for c in concepts])
        token_owner = {t: c.id for c in concepts for t in c.tokens}
        for sample in train + test:
            frame_concepts = [
                int(np.argmax(protos @ (f / np.linalg.norm(f)))) for f in sample.frames
            ]
            asked = token_owner[sample.tokens[0]]
            span = sample.span
            for t in range(span.start, span.end + 1):
                assert frame_concepts[t] == asked

    def test_qa_self_consistency_over_full_corpus(self):
        spec = CorpusSpec(task="qa", seed=3, n_candidates=3, **SMALL)
        train, test, _ = generate_corpus(spec)
        concepts = make_concepts(spec, np.random.default_rng(spec.seed))
        token_owner = {t: c.id for c in concepts for t in c.tokens}
        for sample in train + test:
            qa = sample.qa
            assert qa is not None and qa.span is not None
            question_concept = {token_owner[t] for t in sample.tokens}
            assert len(question_concept) == 1
            correct_concepts = {token_owner[t] for t in qa.candidates[qa.correct_index]}
            assert correct_concepts == question_concept
            for j, cand in enumerate(qa.candidates):
                if j != qa.correct_index:
                    assert question_concept.isdisjoint(
                        {token_owner[t] for t in cand})

    def test_splits_disjoint_by_id(self):
        spec = CorpusSpec(task="retrieval", **SMALL)
        train, test, _ = generate_corpus(spec)
        assert not ({s.id for s in train} & {s.id for s in test})

    def test_retrieval_concept_multisets_unique(self):
        spec = CorpusSpec(task="retrieval", **SMALL)
        train, test, _ = generate_corpus(spec)
        concepts = make_concepts(spec, np.random.default_rng(spec.seed))
        token_owner = {t: c.id for c in concepts for t in c.tokens}
        seen = set()
        for sample in train + test:
            key = tuple(sorted({token_owner[t] for t in sample.tokens}))
            # token multiset identifies the concept set; duplicates would
            # make retrieval ambiguous
            assert key not in seen or len(key) < spec.segments_per_video
            seen.add(key)


def _roundtrip(tmp_path, samples, vocab, task, binary):
    path = tmp_path / ("data.mlvd" if not binary else "data.bin")
    write_dataset(samples, vocab, task, path, binary=binary)
    got_samples, got_vocab, got_task = read_dataset(path)
    assert got_task == task
    assert got_vocab == vocab
    assert len(got_samples) == len(samples)
    for a, b in zip(samples, got_samples):
        assert a.id == b.id
        np.testing.assert_array_equal(a.frames, b.frames)
        assert a.tokens == b.tokens
        if a.qa is not None:
            assert b.qa is not None
            assert a.qa.candidates == b.qa.candidates
            assert a.qa.correct_index == b.qa.correct_index
            assert (a.qa.span == b.qa.span) or (
                a.qa.span.start == b.qa.span.start and a.qa.span.end == b.qa.span.end)
        if a.span is not None:
            assert (b.span.start, b.span.end) == (a.span.start, a.span.end)
    return got_samples


class TestFileFormats:
    @pytest.mark.parametrize("binary", [False, True])
    @pytest.mark.parametrize("task", ["qa", "retrieval", "moment"])
    def test_roundtrip_bitwise(self, tmp_path, task, binary):
        spec = CorpusSpec(task=task, n_candidates=3, **SMALL)
        train, _, vocab = generate_corpus(spec)
        _roundtrip(tmp_path, train, vocab, task, binary)

    @pytest.mark.parametrize("binary", [False, True])
    def test_empty_dataset_roundtrip(self, tmp_path, binary):
        vocab = Vocabulary(size=10)
        path = tmp_path / "empty.mlvd"
        write_dataset([], vocab, "retrieval", path, binary=binary)
        samples, got_vocab, task = read_dataset(path)
        assert samples == [] and got_vocab == vocab and task == "retrieval"

    def test_checksum_stable_over_hundred_samples(self, tmp_path):
        spec = CorpusSpec(task="qa", n_train=100, n_test=1, n_candidates=3,
                          **{k: v for k, v in SMALL.items() if k not in ("n_train", "n_test")})
        train, _, vocab = generate_corpus(spec)
        p1, p2 = tmp_path / "a.mlvd", tmp_path / "b.mlvd"
        write_dataset(train, vocab, "qa", p1)
        got, _, _ = read_dataset(p1)
        write_dataset(got, vocab, "qa", p2)
        h1 = hashlib.sha256(p1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(p2.read_bytes()).hexdigest()
        assert h1 == h2

    def test_malformed_line_reports_line_number(self, tmp_path):
        spec = CorpusSpec(task="retrieval", **SMALL)
        train, _, vocab = generate_corpus(spec)
        path = tmp_path / "bad.mlvd"
        write_dataset(train[:2], vocab, "retrieval", path)
        lines = path.read_text().splitlines()
        lines[2] = lines[2][:-10]  # truncate the second sample record
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError) as exc:
            read_dataset(path)
        assert "line 3" in str(exc.value)

    def test_width_mismatch_rejected(self, tmp_path):
        vocab = Vocabulary(size=10)
        sample = Sample("s0", np.zeros((2, 5), dtype=np.float32), 4, 3, [2, 3])
        path = tmp_path / "w.mlvd"
        write_dataset([sample], vocab, "retrieval", path)
        # header says width 7 (static 4 + motion 3) but frames are 5 wide
        with pytest.raises(DataError):
            read_dataset(path)

    def test_token_out_of_vocab_rejected(self, tmp_path):
        vocab = Vocabulary(size=4)
        sample = Sample("s0", np.zeros((2, 7), dtype=np.float32), 4, 3, [2, 9])
        path = tmp_path / "oov.mlvd"
        write_dataset([sample], vocab, "retrieval", path)
        with pytest.raises(DataError):
            read_dataset(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        vocab = Vocabulary(size=10)
        s = Sample("dup", np.zeros((1, 7), dtype=np.float32), 4, 3, [2])
        path = tmp_path / "dup.mlvd"
        write_dataset([s, s], vocab, "retrieval", path)
        with pytest.raises(DataError):
            read_dataset(path)

    def test_binary_magic_and_truncation(self, tmp_path):
        spec = CorpusSpec(task="moment", **SMALL)
        train, _, vocab = generate_corpus(spec)
        path = tmp_path / "bin.mlvd"
        write_dataset(train[:3], vocab, "moment", path, binary=True)
        blob = path.read_bytes()
        assert blob[:4] == b"MLVA"
        truncated = tmp_path / "trunc.mlvd"
        truncated.write_bytes(blob[: len(blob) - 20])
        with pytest.raises(ParseError):
            read_dataset(truncated)

    def test_bad_span_in_file_rejected(self, tmp_path):
        vocab = Vocabulary(size=10)
        sample = Sample("s0", np.zeros((3, 7), dtype=np.float32), 4, 3, [2],
                        span=SpanAnnotation(1, 2))
        path = tmp_path / "span.mlvd"
        write_dataset([sample], vocab, "moment", path)
        text = path.read_text().replace('"span": [1, 2]', '"span": [1, 9]')
        path.write_text(text)
        with pytest.raises(DataError):
            read_dataset(path)

    def test_binary_accepts_any_feature_width(self, tmp_path):
        # external-feature ingestion: arbitrary static/motion widths
        rng = np.random.default_rng(0)
        vocab = Vocabulary(size=50)
        samples = [
            Sample(f"clip-{i}", rng.standard_normal((5 + i, 13)).astype(np.float32),
                   9, 4, [2 + i, 3])
            for i in range(4)
        ]
        path = tmp_path / "ext.mlvd"
        write_dataset(samples, vocab, "retrieval", path, binary=True)
        got, _, _ = read_dataset(path)
        for a, b in zip(samples, got):
            np.testing.assert_array_equal(a.frames, b.frames)
            assert (b.static_dim, b.motion_dim) == (9, 4)
