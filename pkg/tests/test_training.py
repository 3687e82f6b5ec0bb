"""Optimizer and training-loop tests.

The two-step Adam oracle is worked by hand: lr 0.1, betas (0.9, 0.999),
constant gradient 0.5 on a scalar starting at 1.0.
  step 1: m=0.05, v=2.5e-4, m_hat=0.5, v_hat=0.25, update=0.1 -> 0.9
  step 2: m=0.095, v=4.9975e-4, m_hat=0.5, v_hat=0.25, update=0.1 -> 0.8
Constant gradients make every bias-corrected update exactly lr.
"""

import numpy as np
import pytest

from slotfill import models as md
from slotfill import training as tr
from slotfill.dataset import Utterance
from slotfill.slot_encoder import SlotSchema

TINY = md.ModelConfig(
    word_dim=6, tag_dim=4, hidden_size=8, label_dim=8, fc_hidden=6, fnn_hidden=6
)

SCHEMAS = [
    SlotSchema("time", "the time of the booking"),
    SlotSchema("venue", "the name of the place"),
]


def utt(i, text, spans=()):
    return Utterance(
        id=f"toy/d{i:03d}/0", domain="toy",
        tokens=tuple(text.split()), gold_spans=tuple(spans),
    )


TRAIN = [
    utt(0, "table at seven pm", [("time", 2, 4)]),
    utt(1, "reserve blue hill now", [("venue", 1, 3)]),
    utt(2, "meet me at blue door", [("venue", 3, 5)]),
    utt(3, "book for nine am", [("time", 2, 4)]),
    utt(4, "hello there"),
    utt(5, "table at nine pm", [("time", 2, 4)]),
    utt(6, "reserve green door please", [("venue", 1, 3)]),
    utt(7, "book for seven am", [("time", 2, 4)]),
    utt(8, "thanks a lot"),
    utt(9, "meet me at green hill", [("venue", 3, 5)]),
]
VALID = [
    utt(90, "table at seven am", [("time", 2, 4)]),
    utt(91, "reserve blue door", [("venue", 1, 3)]),
    utt(92, "hello there"),
    utt(93, "book for nine pm", [("time", 2, 4)]),
]

FAST = tr.TrainConfig(max_epochs=3, patience=5, pretrain_steps=4, seed=5)


class TestTrainConfig:
    def test_defaults(self):
        cfg = tr.TrainConfig()
        assert cfg.learning_rate == 0.001
        assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)
        assert cfg.pretrain_steps == 2000
        assert cfg.crf_batch_size == 1 and cfg.tagger_batch_size == 10
        assert cfg.max_epochs == 50 and cfg.patience == 5

    @pytest.mark.parametrize(
        "bad",
        [
            {"learning_rate": 0.0},
            {"beta1": 1.0},
            {"beta2": 0.0},
            {"epsilon": -1e-8},
            {"pretrain_steps": -1},
            {"max_epochs": 0},
            {"patience": 0},
            {"unk_probability": 1.5},
            {"oversample_ratio": (0, 1)},
        ],
    )
    def test_invalid_rejected(self, bad):
        with pytest.raises(tr.TrainingError):
            tr.TrainConfig(**bad)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.full((2, 3), 1.5)}
        state = tr.AdamState(params)
        tr.adam_step(params, {"w": np.zeros((2, 3))}, state, tr.TrainConfig())
        assert np.array_equal(params["w"], np.full((2, 3), 1.5))
        assert state.step == 1

    def test_two_hand_computed_steps(self):
        cfg = tr.TrainConfig(learning_rate=0.1)
        params = {"w": np.array([[1.0]])}
        state = tr.AdamState(params)
        tr.adam_step(params, {"w": np.array([[0.5]])}, state, cfg)
        assert abs(params["w"][0, 0] - 0.9) < 1e-7
        tr.adam_step(params, {"w": np.array([[0.5]])}, state, cfg)
        assert abs(params["w"][0, 0] - 0.8) < 1e-7

    def test_constant_gradient_update_magnitude_is_lr(self):
        cfg = tr.TrainConfig(learning_rate=0.01)
        params = {"w": np.array([[0.0]])}
        state = tr.AdamState(params)
        for _ in range(50):
            before = params["w"][0, 0]
            tr.adam_step(params, {"w": np.array([[3.0]])}, state, cfg)
            assert abs(abs(before - params["w"][0, 0]) - cfg.learning_rate) < 1e-6

    def test_missing_gradient_rejected(self):
        params = {"w": np.zeros((1, 1)), "b": np.zeros((1, 1))}
        state = tr.AdamState(params)
        with pytest.raises(tr.TrainingError, match="'b'"):
            tr.adam_step(params, {"w": np.zeros((1, 1))}, state, tr.TrainConfig())


class TestOversample:
    def test_fewer_positives_reach_ratio(self):
        rng = np.random.default_rng(0)
        inst = [(i, 0) for i in range(10)]
        positive = [i < 3 for i in range(10)]  # 3 positive, 7 negative
        out = tr.oversample(inst, positive, (1, 1), rng)
        n_pos = sum(1 for e in out if positive[e[0]])
        assert n_pos == 7
        assert sum(1 for e in out if not positive[e[0]]) == 7

    def test_all_positive_is_noop(self):
        rng = np.random.default_rng(0)
        inst = [(i, 0) for i in range(5)]
        assert tr.oversample(inst, [True] * 5, (1, 1), rng) == inst

    def test_enough_positives_is_noop(self):
        rng = np.random.default_rng(0)
        inst = [(i, 0) for i in range(6)]
        positive = [True, True, True, True, False, False]
        assert tr.oversample(inst, positive, (1, 1), rng) == inst

    def test_remainder_sample_is_seeded(self):
        inst = [(i, 0) for i in range(10)]
        positive = [i < 4 for i in range(10)]  # target 6: one full copy + 2 sampled
        a = tr.oversample(inst, positive, (1, 1), np.random.default_rng(3))
        b = tr.oversample(inst, positive, (1, 1), np.random.default_rng(3))
        assert a == b

    def test_never_removes_instances(self):
        rng = np.random.default_rng(1)
        inst = [(i, 0) for i in range(8)]
        out = tr.oversample(inst, [i % 4 == 0 for i in range(8)], (1, 1), rng)
        for e in inst:
            assert e in out


class TestUniformStart:
    def test_zero_params_crf_loss_is_length_times_log_s(self):
        model = md.EcrfModel(
            _vocab(), SCHEMAS, config=TINY, rng=np.random.default_rng(0)
        )
        for name in model.store.arrays:
            model.store.arrays[name] = np.zeros_like(model.store.arrays[name])
        ids = model.vocab.encode(TRAIN[0].tokens)
        loss, _ = model.loss(ids, [0, 0, 1, 2], edge_masked=True)
        expected = len(ids) * np.log(5)  # 2 slots -> 5 labels
        assert abs(loss.value[0, 0] - expected) < 1e-10

    def test_zero_params_tagger_loss_is_log_3_per_token(self):
        model = md.CtModel(_vocab(), SCHEMAS, config=TINY, rng=np.random.default_rng(0))
        for name in model.store.arrays:
            model.store.arrays[name] = np.zeros_like(model.store.arrays[name])
        ids = model.vocab.encode(TRAIN[0].tokens)
        loss, _ = model.loss(ids, [2, 2, 0, 1], SCHEMAS[0])
        assert abs(loss.value[0, 0] / len(ids) - np.log(3)) < 1e-12


def _vocab():
    from slotfill.embeddings import build_vocabulary

    extra = [s.description_tokens for s in SCHEMAS]
    return build_vocabulary([u.tokens for u in TRAIN], extra_tokens=extra)


class TestTrainEcrf:
    def test_result_fields_and_history(self):
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=FAST, model_config=TINY)
        assert not result.aborted
        assert len(result.history) <= FAST.max_epochs
        assert result.steps == len(result.history) * len(TRAIN)
        for record in result.history:
            assert set(record) >= {
                "epoch", "train_loss", "validation_accuracy", "steps",
                "improved", "edge_masked",
            }
            assert record["train_loss"] >= 0.0

    def test_edge_weights_untouched_while_masked(self):
        cfg = tr.TrainConfig(max_epochs=2, pretrain_steps=10_000, seed=9)
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        reference = md.EcrfModel(
            _vocab(), SCHEMAS, config=TINY, rng=np.random.default_rng(9)
        )
        trained = result.model.store.arrays
        assert np.array_equal(trained["crf.W"], reference.store.arrays["crf.W"])
        assert not np.array_equal(trained["word_table"], reference.store.arrays["word_table"])
        assert result.model.edge_masked is True

    def test_edge_weights_move_after_pretrain_boundary(self):
        cfg = tr.TrainConfig(max_epochs=3, pretrain_steps=5, seed=9)
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        reference = md.EcrfModel(
            _vocab(), SCHEMAS, config=TINY, rng=np.random.default_rng(9)
        )
        assert not np.array_equal(
            result.model.store.arrays["crf.W"], reference.store.arrays["crf.W"]
        )

    def test_bit_reproducible_checkpoints(self, tmp_path):
        p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        for path in (p1, p2):
            result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=FAST, model_config=TINY)
            md.save_checkpoint(result.model, path)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_best_checkpoint_reproduces_best_metric(self):
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=FAST, model_config=TINY)
        from slotfill.dataset import pooled_values

        metric = tr.validation_accuracy(result.model, VALID, pooled_values(TRAIN))
        assert metric == result.best_metric
        assert result.best_metric == max(r["validation_accuracy"] for r in result.history)

    def test_empty_sets_rejected(self):
        with pytest.raises(tr.TrainingError, match="training"):
            tr.train_ecrf([], VALID, SCHEMAS, config=FAST, model_config=TINY)
        with pytest.raises(tr.TrainingError, match="validation"):
            tr.train_ecrf(TRAIN, [], SCHEMAS, config=FAST, model_config=TINY)

    @pytest.mark.filterwarnings("ignore:overflow encountered in matmul")
    @pytest.mark.filterwarnings("ignore:invalid value encountered in matmul")
    def test_divergence_aborts_with_last_good_params(self):
        # Big enough that embedding-times-weight products overflow double
        # precision; saturating activations absorb anything smaller.
        cfg = tr.TrainConfig(learning_rate=1e200, max_epochs=4, seed=2)
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        assert result.aborted
        assert "non-finite" in result.diagnostic
        for arr in result.model.store.arrays.values():
            assert np.all(np.isfinite(arr))


class TestTrainBaseline:
    def test_ct_runs_and_counts_batched_steps(self):
        cfg = tr.TrainConfig(max_epochs=2, tagger_batch_size=10, seed=4)
        result = tr.train_baseline("ct", TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        assert not result.aborted
        # 10 utterances x 2 slots = 20 base instances; 7 positives vs 13
        # negatives oversamples to 13:13 = 26 -> 3 batches of <=10 per epoch
        assert result.steps == 3 * len(result.history)

    def test_bt_bit_reproducible(self, tmp_path):
        cfg = tr.TrainConfig(max_epochs=2, seed=8)
        p1, p2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        for path in (p1, p2):
            result = tr.train_baseline("bt", TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
            md.save_checkpoint(result.model, path)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            assert f1.read() == f2.read()

    def test_unknown_kind_rejected(self):
        with pytest.raises(tr.TrainingError, match="kind"):
            tr.train_baseline("ecrf", TRAIN, VALID, SCHEMAS, config=FAST)

    def test_loss_decreases_on_average(self):
        cfg = tr.TrainConfig(max_epochs=6, seed=4, learning_rate=0.01)
        result = tr.train_baseline("bt", TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        losses = [r["train_loss"] for r in result.history]
        assert losses[-1] < losses[0]


class TestEarlyStopping:
    def test_stops_after_patience_stale_epochs(self):
        cfg = tr.TrainConfig(max_epochs=50, patience=2, seed=6, learning_rate=1e-9)
        # A learning rate this small cannot move the metric, so epoch 0 is
        # the only improvement and training stops at epoch patience.
        result = tr.train_ecrf(TRAIN, VALID, SCHEMAS, config=cfg, model_config=TINY)
        assert len(result.history) == 1 + cfg.patience
        assert all(not r["improved"] for r in result.history[1:])
        assert result.best_epoch == 0


class TestHistoryFile:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "history.jsonl")
        records = [
            {"epoch": 0, "train_loss": 2.5, "validation_accuracy": 0.4},
            {"epoch": 1, "train_loss": 1.5, "validation_accuracy": 0.6},
        ]
        tr.write_history(path, records)
        assert tr.read_history(path) == records
