"""Optimization loops for all three model kinds.

The CRF labeler trains by conditional maximum likelihood one utterance per
optimizer step, with the edge-potential term masked out of the graph for
the first ``pretrain_steps`` steps. The taggers train per (utterance,
slot) instance with positive instances oversampled to match negatives,
minibatches of ten, and mean per-token cross-entropy.

Everything random (parameter init, shuffles, unknown-token noise,
oversample remainders) flows from one generator seeded by the config, so
identical inputs produce byte-identical checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .baselines import COL_B, COL_I, COL_O, tag_cross_entropy
from .dataset import Utterance, pooled_values, to_iob
from .embeddings import build_vocabulary, unk_replace
from .evaluation import score_values
from .models import EcrfModel, ModelConfig, create_model
from .slot_encoder import LabelSet, SlotSchema


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    pretrain_steps: int = 2000  # optimizer steps with the edge term masked
    crf_batch_size: int = 1
    tagger_batch_size: int = 10
    oversample_ratio: tuple[int, int] = (1, 1)  # positives : negatives
    max_epochs: int = 50
    patience: int = 5
    unk_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        positive = {
            "learning_rate": self.learning_rate,
            "epsilon": self.epsilon,
            "crf_batch_size": self.crf_batch_size,
            "tagger_batch_size": self.tagger_batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
        }
        for name, value in positive.items():
            if value <= 0:
                raise TrainingError(f"{name} must be positive, got {value}")
        for name, value in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 < value < 1.0:
                raise TrainingError(f"{name} must be in (0, 1), got {value}")
        if self.pretrain_steps < 0:
            raise TrainingError("pretrain_steps must be non-negative")
        if not 0.0 <= self.unk_probability <= 1.0:
            raise TrainingError("unk_probability must be in [0, 1]")
        a, b = self.oversample_ratio
        if a <= 0 or b <= 0:
            raise TrainingError("oversample_ratio parts must be positive")


class AdamState:
    """Step counter and first/second moment estimates per parameter."""

    def __init__(self, params: Mapping[str, np.ndarray]):
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """One bias-corrected update, mutating ``params`` in place."""
    missing = set(params) - set(grads)
    if missing:
        raise TrainingError(f"gradients missing for: {sorted(missing)}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)


@dataclass
class TrainResult:
    model: object
    history: list[dict] = field(default_factory=list)
    best_metric: float = 0.0
    best_epoch: int = -1
    steps: int = 0
    aborted: bool = False
    diagnostic: str = ""


def validation_accuracy(model, validation: Sequence[Utterance], v_train: set[str]) -> float:
    """Total exact-match accuracy: the early-stopping metric."""
    preds = {u.id: model.predict_spans(list(u.tokens)) for u in validation}
    report = score_values(preds, validation, v_train)
    accuracy = report["categories"]["total"]["accuracy"]
    return 0.0 if accuracy is None else accuracy


def _build_vocab(train: Sequence[Utterance], schemas: Sequence[SlotSchema]):
    extra = [s.description_tokens for s in schemas]
    return build_vocabulary([u.tokens for u in train], extra_tokens=extra)


def _check_sets(train, validation):
    if not train:
        raise TrainingError("training set is empty")
    if not validation:
        raise TrainingError("validation set is empty")


def train_ecrf(
    train: Sequence[Utterance],
    validation: Sequence[Utterance],
    schemas: Sequence[SlotSchema],
    config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
    pretrained: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    config = config or TrainConfig()
    _check_sets(train, validation)
    rng = np.random.default_rng(config.seed)
    vocab = _build_vocab(train, schemas)
    model = EcrfModel(vocab, schemas, config=model_config, rng=rng, pretrained=pretrained)
    labelset = LabelSet.from_schemas(schemas)
    gold = {u.id: to_iob(u, labelset) for u in train}
    token_ids = {u.id: vocab.encode(u.tokens) for u in train}
    v_train = pooled_values(train)

    def build_batch_loss(batch: list[Utterance], leaves, state: AdamState):
        # The whole optimizer step shares one mask decision; the counter
        # holds completed steps, so steps 0 .. pretrain_steps-1 are masked.
        masked = state.step < config.pretrain_steps
        model.edge_masked = masked
        total = None
        for utt in batch:
            ids = unk_replace(token_ids[utt.id], vocab.singleton_ids, rng, config.unk_probability)
            loss, _ = model.loss(ids, gold[utt.id], leaves=leaves, edge_masked=masked)
            total = loss if total is None else ad.add(total, loss)
        return total

    return _run_training(
        model, train, validation, v_train, config,
        batch_size=config.crf_batch_size,
        epoch_instances=lambda: list(train),
        batch_loss=build_batch_loss,
        loss_denominator=lambda batch: len(batch),
        rng=rng,
        record_extra=lambda: {"edge_masked": model.edge_masked},
    )


def _slot_tags(utt: Utterance, slot: str) -> list[int]:
    tags = [COL_O] * len(utt.tokens)
    for name, start, end in utt.gold_spans:
        if name != slot:
            continue
        for pos in range(start, end):
            tags[pos] = COL_I
        tags[start] = COL_B
    return tags


def oversample(
    instances: Sequence[tuple[int, int]],
    positive: Sequence[bool],
    ratio: tuple[int, int],
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Repeat positive instances until positives : negatives matches ratio.

    Whole copies first, then a seeded sample without replacement for the
    remainder. Never removes anything, so when positives already meet the
    target (or there are none) this is a no-op.
    """
    pos = [inst for inst, p in zip(instances, positive) if p]
    n_neg = len(instances) - len(pos)
    a, b = ratio
    target = int(round(n_neg * a / b))
    out = list(instances)
    if not pos or len(pos) >= target:
        return out
    extra = target - len(pos)
    out.extend(pos * (extra // len(pos)))
    remainder = extra % len(pos)
    if remainder:
        picks = rng.choice(len(pos), size=remainder, replace=False)
        out.extend(pos[i] for i in sorted(picks))
    return out


def train_baseline(
    kind: str,
    train: Sequence[Utterance],
    validation: Sequence[Utterance],
    schemas: Sequence[SlotSchema],
    config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
    pretrained: dict[str, np.ndarray] | None = None,
) -> TrainResult:
    if kind not in ("ct", "bt"):
        raise TrainingError(f"unknown tagger kind '{kind}'")
    config = config or TrainConfig()
    _check_sets(train, validation)
    rng = np.random.default_rng(config.seed)
    vocab = _build_vocab(train, schemas)
    model = create_model(kind, vocab, schemas, config=model_config, rng=rng, pretrained=pretrained)
    v_train = pooled_values(train)

    token_ids = {u.id: vocab.encode(u.tokens) for u in train}
    tags = {(u.id, s.name): _slot_tags(u, s.name) for u in train for s in schemas}
    base = [(ui, si) for ui in range(len(train)) for si in range(len(schemas))]
    positive = [schemas[si].name in train[ui].slots for ui, si in base]

    def epoch_instances():
        return oversample(base, positive, config.oversample_ratio, rng)

    def batch_loss(batch: list[tuple[int, int]], leaves, state: AdamState):
        total = None
        for ui, si in batch:
            utt, schema = train[ui], schemas[si]
            ids = unk_replace(token_ids[utt.id], vocab.singleton_ids, rng, config.unk_probability)
            output = model.forward(ids, schema, leaves)
            ce = tag_cross_entropy(output, tags[(utt.id, schema.name)])
            total = ce if total is None else ad.add(total, ce)
        return total

    # Dividing the summed cross-entropy by the batch's real token count is
    # the same loss as padding to max length with masked positions.
    return _run_training(
        model, train, validation, v_train, config,
        batch_size=config.tagger_batch_size,
        epoch_instances=epoch_instances,
        batch_loss=batch_loss,
        loss_denominator=lambda batch: sum(len(train[ui].tokens) for ui, _ in batch),
        rng=rng,
        record_extra=lambda: {},
    )


def _run_training(
    model, train, validation, v_train, config,
    batch_size, epoch_instances, batch_loss, loss_denominator,
    rng, record_extra,
) -> TrainResult:
    params = {n: model.store.arrays[n] for n in model.store.trainable_names()}
    state = AdamState(params)
    best_arrays = model.store.copy_arrays()
    best_masked = getattr(model, "edge_masked", None)
    result = TrainResult(model=model, best_metric=float("-inf"))
    stale = 0

    for epoch in range(config.max_epochs):
        instances = epoch_instances()
        order = rng.permutation(len(instances))
        loss_sum = 0.0
        denom_sum = 0
        for lo in range(0, len(order), batch_size):
            batch = [instances[i] for i in order[lo : lo + batch_size]]
            leaves = model.store.leaves()
            try:
                total = batch_loss(batch, leaves, state)
                denom = loss_denominator(batch)
                value = total.value[0, 0] / denom
                if not np.isfinite(value):
                    raise ad.NonFiniteError(f"loss is {value}")
                grads = ad.backward(ad.scale(total, 1.0 / denom), leaves)
                adam_step(params, grads, state, config)
            except ad.NonFiniteError as err:
                model.store.load_arrays(best_arrays)
                if best_masked is not None:
                    model.edge_masked = best_masked
                result.aborted = True
                result.diagnostic = (
                    f"non-finite loss at epoch {epoch}, optimizer step {state.step}: {err}"
                )
                result.steps = state.step
                return result
            loss_sum += value * denom
            denom_sum += denom

        metric = validation_accuracy(model, validation, v_train)
        improved = metric > result.best_metric
        if improved:
            result.best_metric = metric
            result.best_epoch = epoch
            best_arrays = model.store.copy_arrays()
            best_masked = getattr(model, "edge_masked", None)
            stale = 0
        else:
            stale += 1
        record = {
            "epoch": epoch,
            "train_loss": loss_sum / max(denom_sum, 1),
            "validation_accuracy": metric,
            "steps": state.step,
            "improved": improved,
        }
        record.update(record_extra())
        result.history.append(record)
        if stale >= config.patience:
            break

    model.store.load_arrays(best_arrays)
    if best_masked is not None:
        model.edge_masked = best_masked
    result.steps = state.step
    return result


def write_history(path: str, history: Sequence[Mapping]) -> None:
    """One JSON record per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_history(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records
