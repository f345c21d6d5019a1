"""Vocabulary, query encoding, world generation, and JSONL ingestion."""

import json

import pytest

from bertese import vocab as V
from bertese.vocab import ClozeQuery, Vocabulary, decode_tokens, encode_query, load_lama_jsonl
from bertese.world import SyntheticWorldSpec, generate_world, load_world, save_world


@pytest.fixture(scope="module")
def small_world():
    return generate_world(SyntheticWorldSpec(
        relation_count=4, entities_per_relation=10, objects_per_relation=5, seed=7,
    ))


class TestVocabulary:
    def test_special_ids_fixed(self):
        v = Vocabulary.from_corpus(["zebra", "apple"])
        assert [v.id_of(t) for t in V.SPECIAL_TOKENS] == [0, 1, 2, 3, 4]
        assert v.id_of("apple") == 5  # sorted after specials

    def test_round_trip(self):
        v = Vocabulary.from_corpus(["dante", "florence", "born", "was", "in"])
        for t in ("dante", "born", "[MASK]"):
            assert v.token_of(v.id_of(t)) == t

    def test_unknown_maps_to_unk(self):
        v = Vocabulary.from_corpus(["known"])
        assert v.id_of("zzzunknown") == V.UNK

    def test_decode_rejects_out_of_range(self):
        v = Vocabulary.from_corpus(["a"])
        with pytest.raises(ValueError):
            decode_tokens([len(v)], v)

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(list(V.SPECIAL_TOKENS) + ["x", "x"])


class TestEncoding:
    def test_framing_and_mask_form(self):
        v = Vocabulary.from_corpus(["obama", "was", "born", "in"])
        ids = encode_query("Obama was born in [MASK]", v)
        assert ids[0] == V.CLS and ids[-1] == V.SEP
        assert ids.count(V.MASK) == 1
        assert decode_tokens(ids, v) == "[CLS] obama was born in [MASK] [SEP]"

    def test_decode_encode_round_trip(self):
        v = Vocabulary.from_corpus(["a", "b", "c"])
        assert decode_tokens(encode_query("a b c", v), v) == "[CLS] a b c [SEP]"

    def test_empty_text_rejected(self):
        v = Vocabulary.from_corpus([])
        with pytest.raises(ValueError):
            encode_query("   ", v)


class TestClozeQuery:
    def test_requires_exactly_one_mask(self):
        with pytest.raises(ValueError):
            ClozeQuery(tokens=(V.CLS, 5, V.SEP), mask_index=1, answer=5, relation="r")
        with pytest.raises(ValueError):
            ClozeQuery(
                tokens=(V.CLS, V.MASK, V.MASK, V.SEP), mask_index=1, answer=5, relation="r"
            )

    def test_mask_index_must_point_at_mask(self):
        with pytest.raises(ValueError):
            ClozeQuery(tokens=(V.CLS, V.MASK, V.SEP), mask_index=0, answer=5, relation="r")


class TestWorld:
    def test_counts_by_construction(self, small_world):
        w = small_world
        assert len(w.facts) == 4 * 10
        assert len(w.canonical) == 40
        assert len(w.perturbed_train) + len(w.perturbed_eval) == 40

    def test_same_seed_identical(self, small_world):
        again = generate_world(small_world.spec)
        assert [q.tokens for q in again.canonical] == [q.tokens for q in small_world.canonical]
        assert again.facts == small_world.facts

    def test_different_seed_differs(self, small_world):
        spec = SyntheticWorldSpec(
            relation_count=4, entities_per_relation=10, objects_per_relation=5, seed=8,
        )
        assert generate_world(spec).facts != small_world.facts

    def test_functional_mapping_and_answer_identity(self, small_world):
        w = small_world
        gold = {(f.subject, f.relation): w.vocab.id_of(f.object) for f in w.facts}
        assert len(gold) == len(w.facts)
        for q in w.canonical + w.perturbed_train + w.perturbed_eval:
            subject = next(
                w.vocab.token_of(t) for t in q.tokens if w.vocab.token_of(t).startswith("ent_")
            )
            assert q.answer == gold[(subject, q.relation)]

    def test_subject_disjoint_split(self, small_world):
        w = small_world
        train = {w.vocab.token_of(t) for q in w.perturbed_train for t in q.tokens
                 if w.vocab.token_of(t).startswith("ent_")}
        evals = {w.vocab.token_of(t) for q in w.perturbed_eval for t in q.tokens
                 if w.vocab.token_of(t).startswith("ent_")}
        assert train and evals and not (train & evals)

    def test_templates_differ_in_fixed_tokens(self, small_world):
        for _, canonical, perturbed in small_world.spec.resolved_templates():
            fixed_c = [t for t in canonical.split() if t not in ("[X]", "[Y]")]
            fixed_p = [t for t in perturbed.split() if t not in ("[X]", "[Y]")]
            assert fixed_c != fixed_p

    def test_every_token_categorized(self, small_world):
        w = small_world
        for token in w.vocab.tokens[5:]:
            assert w.token_category[token] in (
                "entity", "verb", "determiner", "noun-filler"
            )

    def test_identical_templates_rejected(self):
        spec = SyntheticWorldSpec(
            relation_count=1,
            templates=(("r", "[X] likes [Y] .", "[X] likes [Y] ."),),
        )
        with pytest.raises(ValueError):
            generate_world(spec)

    def test_fact_sentences_contain_object_not_mask(self, small_world):
        w = small_world
        for sent, fact in zip(w.fact_sentences(), w.facts):
            assert w.vocab.id_of(fact.object) in sent
            assert V.MASK not in sent

    def test_world_file_round_trip(self, small_world, tmp_path):
        path = tmp_path / "world.json"
        save_world(small_world, path)
        first = path.read_bytes()
        loaded = load_world(path)
        assert loaded.facts == small_world.facts
        assert [q.tokens for q in loaded.perturbed_eval] == [
            q.tokens for q in small_world.perturbed_eval
        ]
        save_world(loaded, path)
        assert path.read_bytes() == first


class TestLoadJsonl:
    def write(self, tmp_path, lines):
        p = tmp_path / "data.jsonl"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return p

    def vocab(self):
        return Vocabulary.from_corpus(["dante", "was", "born", "in", "florence", "."])

    def test_basic_record(self, tmp_path):
        p = self.write(tmp_path, [json.dumps(
            {"relation": "P19", "query": "dante was born in [MASK] .", "answer": "florence"}
        )])
        queries, report = load_lama_jsonl(p, self.vocab())
        assert report.loaded == 1 and len(queries) == 1
        q = queries[0]
        assert q.tokens[q.mask_index] == V.MASK
        assert q.answer == self.vocab().id_of("florence")
        assert q.relation == "P19"

    def test_multi_token_answer_skipped(self, tmp_path):
        p = self.write(tmp_path, [json.dumps(
            {"relation": "P19", "query": "x was born in [MASK]", "answer": "new york"}
        )])
        queries, report = load_lama_jsonl(p, self.vocab())
        assert queries == [] and report.skipped_multi_token_answer == 1

    def test_oov_answer_skipped(self, tmp_path):
        p = self.write(tmp_path, [json.dumps(
            {"relation": "P19", "query": "dante was born in [MASK]", "answer": "xyzzy"}
        )])
        queries, report = load_lama_jsonl(p, self.vocab())
        assert queries == [] and report.skipped_oov_answer == 1

    def test_mask_count_error_names_line(self, tmp_path):
        p = self.write(tmp_path, [
            json.dumps({"relation": "r", "query": "dante was born in [MASK]", "answer": "florence"}),
            json.dumps({"relation": "r", "query": "no mask here", "answer": "florence"}),
        ])
        with pytest.raises(ValueError, match="line 2"):
            load_lama_jsonl(p, self.vocab())

    def test_malformed_json_names_line(self, tmp_path):
        p = self.write(tmp_path, ["{not json"])
        with pytest.raises(ValueError, match="line 1"):
            load_lama_jsonl(p, self.vocab())

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.jsonl"
        p.write_text("", encoding="utf-8")
        queries, report = load_lama_jsonl(p, self.vocab())
        assert queries == [] and report.total_lines == 0
