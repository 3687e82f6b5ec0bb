import numpy as np
import pytest

from slotfill import autodiff as ad
from slotfill import embeddings as emb
from slotfill import slot_encoder as se


SCHEMAS = [
    se.SlotSchema("time", "time of booking"),
    se.SlotSchema("date", "date"),
    se.SlotSchema("venue", "venue name"),
]


def make_vocab():
    return emb.build_vocabulary(
        [["book", "at", "six", "pm"]],
        extra_tokens=[s.description_tokens for s in SCHEMAS],
    )


class TestLabelSet:
    def test_layout(self):
        ls = se.LabelSet.from_schemas(SCHEMAS)
        assert ls.size == 7
        assert ls.O_INDEX == 0
        assert ls.begin("time") == 1 and ls.inside("time") == 2
        assert ls.begin("date") == 3 and ls.inside("date") == 4
        assert ls.begin("venue") == 5 and ls.inside("venue") == 6

    def test_slot_of_roundtrip(self):
        ls = se.LabelSet.from_schemas(SCHEMAS)
        assert ls.slot_of(0) is None
        for s in SCHEMAS:
            assert ls.slot_of(ls.begin(s.name)) == s.name
            assert ls.slot_of(ls.inside(s.name)) == s.name
            assert ls.is_begin(ls.begin(s.name))
            assert ls.is_inside(ls.inside(s.name))

    def test_out_of_range_index(self):
        ls = se.LabelSet.from_schemas(SCHEMAS)
        with pytest.raises(se.SchemaError):
            ls.slot_of(7)

    def test_duplicate_slots_rejected(self):
        with pytest.raises(se.SchemaError, match="duplicate"):
            se.LabelSet(["time", "time"])

    def test_unknown_slot(self):
        ls = se.LabelSet.from_schemas(SCHEMAS)
        with pytest.raises(se.SchemaError, match="unknown slot"):
            ls.begin("nope")


class TestSchemaIO:
    def test_load_save_roundtrip(self, tmp_path):
        path = tmp_path / "schemas.json"
        se.save_schemas(SCHEMAS, str(path))
        assert se.load_schemas(str(path)) == SCHEMAS

    def test_load_rejects_missing_keys(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[{"slot": "x"}]')
        with pytest.raises(se.SchemaError, match="entry 0"):
            se.load_schemas(str(path))

    def test_load_rejects_duplicates(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[{"slot": "x", "description": "a"}, {"slot": "x", "description": "b"}]')
        with pytest.raises(se.SchemaError, match="duplicate"):
            se.load_schemas(str(path))

    def test_empty_description_rejected(self):
        with pytest.raises(se.SchemaError, match="empty description"):
            se.validate_schemas([se.SlotSchema("x", "   ")])


class TestEncodeDescription:
    def test_mean_of_rows(self):
        vocab = make_vocab()
        table = emb.init_word_table(vocab, 6, np.random.default_rng(0))
        out = se.encode_description(("time", "of", "booking"), ad.constant(table), vocab)
        ids = vocab.encode(["time", "of", "booking"])
        np.testing.assert_allclose(out.value, table[ids].mean(axis=0, keepdims=True), atol=1e-15)

    def test_oov_description_word_uses_unk(self):
        vocab = make_vocab()
        table = emb.init_word_table(vocab, 6, np.random.default_rng(0))
        out = se.encode_description(("qqq",), ad.constant(table), vocab)
        np.testing.assert_allclose(out.value, table[emb.UNK_ID : emb.UNK_ID + 1])

    def test_empty_rejected(self):
        vocab = make_vocab()
        table = ad.constant(emb.init_word_table(vocab, 6, np.random.default_rng(0)))
        with pytest.raises(se.SchemaError):
            se.encode_description((), table, vocab)


class TestLabelMatrix:
    def setup_method(self):
        self.vocab = make_vocab()
        rng = np.random.default_rng(4)
        self.word = emb.init_word_table(self.vocab, 5, rng)
        self.tag = emb.init_tag_table(4, rng)
        self.fc = se.init_label_fc(9, 6, 7, rng)

    def numpy_oracle(self):
        # Independent reimplementation: plain numpy, no graph code.
        rows = []
        for kind, schema in [("O", None)] + [(k, s) for s in SCHEMAS for k in ("B", "I")]:
            if schema is None:
                f = np.zeros(5)
                tag = self.tag[emb.TAG_O]
            else:
                ids = self.vocab.encode(list(schema.description_tokens))
                f = self.word[ids].mean(axis=0)
                tag = self.tag[emb.TAG_B if kind == "B" else emb.TAG_I]
            x = np.concatenate([f, tag])
            h = np.tanh(x @ self.fc["W1"] + self.fc["b1"][0])
            rows.append(h @ self.fc["W2"] + self.fc["b2"][0])
        return np.stack(rows)

    def graph_matrix(self):
        leaves = {k: ad.constant(v) for k, v in self.fc.items()}
        return se.encode_label_matrix(
            SCHEMAS, ad.constant(self.word), ad.constant(self.tag), leaves, self.vocab
        )

    def test_matches_numpy_oracle(self):
        got = self.graph_matrix()
        assert got.value.shape == (7, 7)
        np.testing.assert_allclose(got.value, self.numpy_oracle(), atol=1e-12)

    def test_begin_inside_differ_only_via_tag(self):
        # same description feeds both rows, so with identical tag rows they collapse
        tag_equal = self.tag.copy()
        tag_equal[emb.TAG_I] = tag_equal[emb.TAG_B]
        leaves = {k: ad.constant(v) for k, v in self.fc.items()}
        out = se.encode_label_matrix(
            SCHEMAS, ad.constant(self.word), ad.constant(tag_equal), leaves, self.vocab
        ).value
        for k in range(len(SCHEMAS)):
            np.testing.assert_allclose(out[1 + 2 * k], out[2 + 2 * k], atol=1e-15)

    def test_gradients_reach_all_parameters(self):
        params = {
            "word": self.word,
            "tag": self.tag,
            **{f"fc.{k}": v for k, v in self.fc.items()},
        }

        def build(leaves):
            fc = {k.split(".", 1)[1]: v for k, v in leaves.items() if k.startswith("fc.")}
            mat = se.encode_label_matrix(
                SCHEMAS, leaves["word"], leaves["tag"], fc, self.vocab
            )
            return ad.sum_all(ad.tanh(mat))

        errs = ad.check_gradients(build, params)
        assert max(errs.values()) < 1e-6, errs

    def test_deterministic(self):
        a = self.graph_matrix().value
        b = self.graph_matrix().value
        np.testing.assert_array_equal(a, b)
