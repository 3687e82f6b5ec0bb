"""Model assembly: parameter stores, forward passes, decoding, checkpoints.

Three model kinds share one checkpoint format and one vocabulary/embedding
layer. The CRF labeler decodes all slots jointly over a label set built
from slot descriptions; the two taggers run once per slot. Either way a
model reloaded from its checkpoint decodes identically to the one saved.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import baselines as bl
from . import context_encoder as ce
from . import crf
from . import embeddings as emb
from . import slot_encoder as se
from .dataset import Span
from .evaluation import extract_spans
from .slot_encoder import LabelSet, SlotSchema

CHECKPOINT_VERSION = 1


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    word_dim: int = 50
    tag_dim: int = 50
    hidden_size: int = 100  # BiLSTM output width (both directions together)
    label_dim: int = 100  # label vector width; must equal hidden_size
    fc_hidden: int = 100  # label-encoder hidden layer
    fnn_hidden: int = 100  # tagger feedforward hidden layer
    freeze_embeddings: bool = False

    def __post_init__(self):
        if self.hidden_size % 2:
            raise ModelError(f"hidden_size {self.hidden_size} must be even")
        if self.label_dim != self.hidden_size:
            raise ModelError(
                "label_dim must equal hidden_size (node potentials are dot products "
                f"between them), got {self.label_dim} and {self.hidden_size}"
            )
        for field in ("word_dim", "tag_dim", "fc_hidden", "fnn_hidden"):
            if getattr(self, field) < 1:
                raise ModelError(f"{field} must be positive")


class ParamStore:
    """Named parameter arrays plus which of them receive updates."""

    def __init__(self, arrays: dict[str, np.ndarray], frozen: frozenset[str] = frozenset()):
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        unknown = frozen - set(self.arrays)
        if unknown:
            raise ModelError(f"frozen names not in store: {sorted(unknown)}")
        self.frozen = frozenset(frozen)

    def leaves(self) -> dict[str, ad.Node]:
        """Fresh graph leaves over the current array values."""
        return {name: ad.constant(value) for name, value in self.arrays.items()}

    def trainable_names(self) -> list[str]:
        return sorted(set(self.arrays) - self.frozen)

    def copy_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.arrays.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        if set(arrays) != set(self.arrays):
            raise ModelError("parameter names do not match the store")
        for k, v in arrays.items():
            if v.shape != self.arrays[k].shape:
                raise ModelError(f"shape mismatch for '{k}': {v.shape} vs {self.arrays[k].shape}")
            self.arrays[k] = np.array(v, dtype=np.float64)


class _BaseModel:
    kind = ""

    def __init__(
        self,
        vocab: emb.Vocabulary,
        schemas: Sequence[SlotSchema],
        config: ModelConfig | None = None,
        rng: np.random.Generator | None = None,
        pretrained: dict[str, np.ndarray] | None = None,
        store: ParamStore | None = None,
    ):
        se.validate_schemas(schemas)
        self.vocab = vocab
        self.schemas = list(schemas)
        self.config = config or ModelConfig()
        if store is not None:
            self.store = store
        else:
            if rng is None:
                raise ModelError("either a seeded generator or a parameter store is required")
            self.store = self._init_store(rng, pretrained)

    def _init_store(self, rng, pretrained) -> ParamStore:
        raise NotImplementedError

    def _frozen(self) -> frozenset[str]:
        return frozenset({"word_table"}) if self.config.freeze_embeddings else frozenset()

    def predict_spans(self, tokens: Sequence[str], schemas: Sequence[SlotSchema] | None = None) -> list[Span]:
        raise NotImplementedError


class EcrfModel(_BaseModel):
    kind = "ecrf"

    def __init__(self, *args, edge_masked: bool = True, **kwargs):
        # Masked is the fresh-model state: training unmasks edges after the
        # warm-up phase, and checkpoints record where they ended up.
        super().__init__(*args, **kwargs)
        self.edge_masked = edge_masked

    def _init_store(self, rng, pretrained) -> ParamStore:
        cfg = self.config
        arrays: dict[str, np.ndarray] = {}
        arrays["word_table"] = emb.init_word_table(self.vocab, cfg.word_dim, rng, pretrained)
        arrays["tag_table"] = emb.init_tag_table(cfg.tag_dim, rng)
        fc = se.init_label_fc(cfg.word_dim + cfg.tag_dim, cfg.fc_hidden, cfg.label_dim, rng)
        for k, v in fc.items():
            arrays[f"label_fc.{k}"] = v
        arrays.update(ce.init_bilstm("bilstm", cfg.word_dim, cfg.hidden_size // 2, rng))
        arrays["crf.W"] = rng.uniform(
            -emb.INIT_SCALE, emb.INIT_SCALE, size=(cfg.label_dim, cfg.label_dim)
        )
        return ParamStore(arrays, self._frozen())

    def label_matrix(
        self,
        leaves: Mapping[str, ad.Node],
        schemas: Sequence[SlotSchema] | None = None,
    ) -> ad.Node:
        schemas = self.schemas if schemas is None else list(schemas)
        fc = {k.split(".", 1)[1]: v for k, v in leaves.items() if k.startswith("label_fc.")}
        return se.encode_label_matrix(
            schemas, leaves["word_table"], leaves["tag_table"], fc, self.vocab
        )

    def potentials(
        self,
        token_ids: Sequence[int],
        leaves: Mapping[str, ad.Node] | None = None,
        schemas: Sequence[SlotSchema] | None = None,
        edge_masked: bool | None = None,
    ) -> crf.PotentialTable:
        if not token_ids:
            raise ModelError("cannot build potentials for an empty utterance")
        leaves = self.store.leaves() if leaves is None else leaves
        masked = self.edge_masked if edge_masked is None else edge_masked
        x = ad.lookup(leaves["word_table"], token_ids)
        features = ce.extract_features(x, leaves, "bilstm")
        labels = self.label_matrix(leaves, schemas)
        return crf.build_potentials(features, labels, leaves["crf.W"], edge_masked=masked)

    def loss(
        self,
        token_ids: Sequence[int],
        gold_labels: Sequence[int],
        leaves: Mapping[str, ad.Node] | None = None,
        edge_masked: bool | None = None,
    ) -> tuple[ad.Node, Mapping[str, ad.Node]]:
        leaves = self.store.leaves() if leaves is None else leaves
        table = self.potentials(token_ids, leaves, edge_masked=edge_masked)
        return ad.scale(crf.log_likelihood(gold_labels, table), -1.0), leaves

    def decode(
        self,
        tokens: Sequence[str],
        schemas: Sequence[SlotSchema] | None = None,
    ) -> list[int]:
        ids = self.vocab.encode(tokens)
        table = self.potentials(ids, schemas=schemas)
        return crf.viterbi_decode(table)[0]

    def predict_spans(self, tokens, schemas=None) -> list[Span]:
        schemas = self.schemas if schemas is None else list(schemas)
        labelset = LabelSet.from_schemas(schemas)
        return extract_spans(self.decode(tokens, schemas), labelset)

    def inspect(
        self,
        tokens: Sequence[str],
        schemas: Sequence[SlotSchema] | None = None,
    ) -> crf.InspectResult:
        ids = self.vocab.encode(tokens)
        return crf.inspect_table(self.potentials(ids, schemas=schemas))


class _TaggerModel(_BaseModel):
    def _init_store(self, rng, pretrained) -> ParamStore:
        cfg = self.config
        arrays: dict[str, np.ndarray] = {}
        arrays["word_table"] = emb.init_word_table(self.vocab, cfg.word_dim, rng, pretrained)
        arrays.update(
            bl.init_tagger_params(self.kind, cfg.word_dim, cfg.hidden_size, cfg.fnn_hidden, rng)
        )
        return ParamStore(arrays, self._frozen())

    def forward(
        self,
        token_ids: Sequence[int],
        schema: SlotSchema,
        leaves: Mapping[str, ad.Node] | None = None,
    ) -> bl.TaggerOutput:
        leaves = self.store.leaves() if leaves is None else leaves
        fn = bl.ct_forward if self.kind == "ct" else bl.bt_forward
        return fn(token_ids, schema, leaves["word_table"], self.vocab, leaves)

    def loss(
        self,
        token_ids: Sequence[int],
        gold_tags: Sequence[int],
        schema: SlotSchema,
        leaves: Mapping[str, ad.Node] | None = None,
    ) -> tuple[ad.Node, Mapping[str, ad.Node]]:
        leaves = self.store.leaves() if leaves is None else leaves
        output = self.forward(token_ids, schema, leaves)
        return bl.tag_cross_entropy(output, gold_tags), leaves

    def predict_spans(self, tokens, schemas=None) -> list[Span]:
        schemas = self.schemas if schemas is None else list(schemas)
        ids = self.vocab.encode(tokens)
        spans: list[Span] = []
        for schema in schemas:
            probs = self.forward(ids, schema).probs.value
            spans.extend((schema.name, a, b) for a, b in bl.decode_per_slot(probs))
        return spans

    def slot_probabilities(self, tokens: Sequence[str], schema: SlotSchema) -> np.ndarray:
        return self.forward(self.vocab.encode(tokens), schema).probs.value


class CtModel(_TaggerModel):
    kind = "ct"


class BtModel(_TaggerModel):
    kind = "bt"


MODEL_KINDS = {"ecrf": EcrfModel, "ct": CtModel, "bt": BtModel}


def create_model(
    kind: str,
    vocab: emb.Vocabulary,
    schemas: Sequence[SlotSchema],
    config: ModelConfig | None = None,
    rng: np.random.Generator | None = None,
    pretrained: dict[str, np.ndarray] | None = None,
):
    if kind not in MODEL_KINDS:
        raise ModelError(f"unknown model kind '{kind}' (choose from {sorted(MODEL_KINDS)})")
    return MODEL_KINDS[kind](vocab, schemas, config=config, rng=rng, pretrained=pretrained)


def save_checkpoint(model, path: str, train_config: Mapping | None = None) -> None:
    """Single JSON document; identical models serialize to identical bytes."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "model": model.kind,
            "model_config": asdict(model.config),
            "edge_masked": getattr(model, "edge_masked", None),
            "train_config": dict(train_config) if train_config else None,
        },
        "schemas": [{"slot": s.name, "description": s.description} for s in model.schemas],
        "vocab": {
            "tokens": list(model.vocab.tokens),
            "counts": dict(sorted(model.vocab.counts.items())),
        },
        "params": {
            name: {"shape": list(value.shape), "values": value.tolist()}
            for name, value in sorted(model.store.arrays.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_checkpoint(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ModelError(f"{path}: {err}") from None
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version!r}")
    try:
        cfg = doc["config"]
        kind = cfg["model"]
        model_config = ModelConfig(**cfg["model_config"])
        schemas = [SlotSchema(e["slot"], e["description"]) for e in doc["schemas"]]
        tokens = doc["vocab"]["tokens"]
        counts = doc["vocab"].get("counts", {})
        arrays = {}
        for name, entry in doc["params"].items():
            value = np.array(entry["values"], dtype=np.float64)
            if list(value.shape) != entry["shape"]:
                raise ModelError(f"{path}: parameter '{name}' shape mismatch")
            arrays[name] = value
    except (KeyError, TypeError) as err:
        raise ModelError(f"{path}: malformed checkpoint ({err})") from None
    if kind not in MODEL_KINDS:
        raise ModelError(f"{path}: unknown model kind '{kind}'")
    vocab = emb.Vocabulary(
        tokens=tuple(tokens),
        id_of={t: i for i, t in enumerate(tokens)},
        counts=dict(counts),
    )
    frozen = frozenset({"word_table"}) if model_config.freeze_embeddings else frozenset()
    store = ParamStore(arrays, frozen)
    if kind == "ecrf":
        return EcrfModel(
            vocab, schemas, config=model_config, store=store,
            edge_masked=bool(cfg.get("edge_masked")),
        )
    return MODEL_KINDS[kind](vocab, schemas, config=model_config, store=store)
