"""The KVPFormer network.

Pipeline: hash-embedding backbone -> spatially-biased transformer
encoder -> question identification -> DETR-style (maskless, parallel)
decoder over the identified questions -> coarse sigmoid scoring over
all entities -> top-K candidate selection -> fine softmax re-ranking.

Attention logits are the sum of a content dot product, a 2D-position
dot product, and a learned per-head bias computed from the 18-d
pairwise box feature. Content states evolve through the layers while
the positional embeddings are re-concatenated at every layer.
"""

from __future__ import annotations

import math
import re
import zlib
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .data import Document, LABELS, LABEL_TO_INDEX, RelationPair, reading_order
from .geometry import BBox, FEATURE_DIM, pairwise_feature_matrix
from .numerics import Parameter, Tensor, concat

QUESTION_ROLES = ("answer_as_question", "non_other")
ANSWER_INDEX = LABEL_TO_INDEX["answer"]
OTHER_INDEX = LABEL_TO_INDEX["other"]
NUM_POS_BUCKETS = 1001  # grid coordinates 0..1000 inclusive

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class ConfigError(ValueError):
    """Invalid or inconsistent model configuration."""


@dataclass
class ModelConfig:
    num_encoder_layers: int = 3
    num_decoder_layers: int = 3
    num_heads: int = 12
    d_model: int = 768
    d_ffn: int = 2048
    top_k: int = 5
    hash_vocab_size: int = 8192
    dropout_rate: float = 0.1
    use_gold_labels: bool = False
    use_spatial_bias: bool = True
    use_coarse_to_fine: bool = True
    coarse_accept_threshold: float = 0.5
    question_role: str = "answer_as_question"
    label_embed_dim: int = 0  # 0 -> d_model // 4
    d_bias_hidden: int = 32
    use_wh_pos: bool = False

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by num_heads={self.num_heads}"
            )
        n_tables = len(self.pos_table_names)
        if self.d_model % n_tables != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by {n_tables} position tables"
            )
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.question_role not in QUESTION_ROLES:
            raise ConfigError(f"question_role must be one of {QUESTION_ROLES}")
        if self.hash_vocab_size < 1:
            raise ConfigError("hash_vocab_size must be >= 1")
        if self.use_gold_labels and not 0 < self.label_dim < self.d_model:
            raise ConfigError(
                f"label embedding dim {self.label_dim} must lie in (0, d_model)"
            )

    @property
    def pos_table_names(self) -> tuple[str, ...]:
        return ("x1", "y1", "x2", "y2", "w", "h") if self.use_wh_pos else (
            "x1", "y1", "x2", "y2"
        )

    @property
    def label_dim(self) -> int:
        return self.label_embed_dim or max(1, self.d_model // 4)

    @property
    def token_dim(self) -> int:
        return self.d_model - self.label_dim if self.use_gold_labels else self.d_model


def config_from_dict(payload: dict, cls=ModelConfig):
    """Build a config dataclass from JSON data; unknown keys are rejected."""
    known = {f.name for f in fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**payload)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def hash_token(token: str, vocab_size: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % vocab_size


@dataclass
class DocFeatures:
    """Geometry and lookup indices precomputed once per document."""

    doc: Document
    entity_ids: list[int]
    index_of: dict[int, int]
    token_ids: list[np.ndarray]
    label_ids: np.ndarray
    pos_ids: np.ndarray
    rfeat: np.ndarray
    boxes: list[BBox]

    @property
    def n(self) -> int:
        return len(self.entity_ids)


@dataclass
class EntityRepresentation:
    content: Tensor
    pos2d: Tensor
    box: BBox


@dataclass
class ForwardResult:
    label_logits: Tensor
    label_probs: np.ndarray
    predicted_labels: np.ndarray
    H: Tensor
    question_ids: list[int]
    Q: Tensor | None
    coarse: Tensor | None
    candidates: list[list[int]]
    fine_logits: Tensor | None
    fine_probs: Tensor | None
    attention: list[np.ndarray] | None


@dataclass
class Prediction:
    """Full inference output for one document."""

    entity_labels: np.ndarray
    question_ids: list[int]
    coarse_scores: np.ndarray
    candidates: list[list[int]]
    fine_scores: list[np.ndarray]
    pairs: set[RelationPair]


def select_question_ids(
    label_indices: Sequence[int], entity_ids: Sequence[int], role: str
) -> list[int]:
    """Entity ids treated as decoder questions under the given role.

    answer_as_question keeps entities labeled Answer (value entities ask
    for their keys); non_other keeps everything not labeled Other.
    """
    if role == "answer_as_question":
        return [eid for eid, li in zip(entity_ids, label_indices) if li == ANSWER_INDEX]
    return [eid for eid, li in zip(entity_ids, label_indices) if li != OTHER_INDEX]


def topk_candidates(
    scores: Sequence[float],
    k: int,
    entity_ids: Sequence[int] | None = None,
    exclude: int | None = None,
) -> list[int]:
    """Ids of the highest-scoring entities, descending, ties to lower id.

    Returns min(k, available) ids; `exclude` drops the question's own
    entity from its candidate list.
    """
    ids = list(range(len(scores))) if entity_ids is None else list(entity_ids)
    order = sorted(range(len(ids)), key=lambda j: (-float(scores[j]), ids[j]))
    kept = [ids[j] for j in order if exclude is None or ids[j] != exclude]
    return kept[: min(k, len(kept))]


class KVPFormerModel:
    """Encoder stack, decoder stack, question head and both answer heads."""

    def __init__(self, config: ModelConfig, seed: int = 0, init_std: float = 0.01):
        self.config = config
        self._params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        c = config

        self._weight("backbone.token_embed", (c.hash_vocab_size, c.token_dim), rng, init_std)
        self._weight("backbone.empty_token", (1, c.token_dim), rng, init_std)
        if c.use_gold_labels:
            self._weight("label_embed", (len(LABELS), c.label_dim), rng, init_std)
        d_part = c.d_model // len(c.pos_table_names)
        for name in c.pos_table_names:
            self._weight(f"pos.{name}", (NUM_POS_BUCKETS, d_part), rng, init_std)

        for i in range(c.num_encoder_layers):
            self._init_attention(f"enc.{i}.self", rng, init_std)
            self._init_block_tail(f"enc.{i}", ("ln1", "ln2"), rng, init_std)
        for i in range(c.num_decoder_layers):
            self._init_attention(f"dec.{i}.self", rng, init_std)
            self._init_attention(f"dec.{i}.cross", rng, init_std)
            self._init_block_tail(f"dec.{i}", ("ln1", "ln2", "ln3"), rng, init_std)

        self._weight("question_head.w", (c.d_model, len(LABELS)), rng, init_std)
        self._zeros("question_head.b", (len(LABELS),))
        for head in ("coarse", "fine"):
            self._weight(f"{head}.feat.w1", (FEATURE_DIM, c.d_bias_hidden), rng, init_std)
            self._zeros(f"{head}.feat.b1", (c.d_bias_hidden,))
            self._weight(f"{head}.feat.w2", (c.d_bias_hidden, c.d_model), rng, init_std)
            self._zeros(f"{head}.feat.b2", (c.d_model,))
            self._weight(f"{head}.mlp.w1", (c.d_model, c.d_model), rng, init_std)
            self._zeros(f"{head}.mlp.b1", (c.d_model,))
            self._weight(f"{head}.mlp.w2", (c.d_model, 1), rng, init_std)
            self._zeros(f"{head}.mlp.b2", (1,))

    # ------------------------------------------------------------------
    # parameter registry

    def _register(self, name: str, data: np.ndarray) -> None:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = Tensor(data, requires_grad=True)

    def _weight(self, name, shape, rng, std) -> None:
        self._register(name, rng.normal(0.0, std, size=shape))

    def _zeros(self, name, shape) -> None:
        self._register(name, np.zeros(shape))

    def _ones(self, name, shape) -> None:
        self._register(name, np.ones(shape))

    def _init_attention(self, prefix: str, rng, std) -> None:
        d = self.config.d_model
        for w in ("wq_c", "wq_p", "wk_c", "wk_p", "wv", "wo"):
            self._weight(f"{prefix}.{w}", (d, d), rng, std)
        self._zeros(f"{prefix}.bo", (d,))
        if self.config.use_spatial_bias:
            self._weight(f"{prefix}.bias.w1", (FEATURE_DIM, self.config.d_bias_hidden), rng, std)
            self._zeros(f"{prefix}.bias.b1", (self.config.d_bias_hidden,))
            self._weight(f"{prefix}.bias.w2", (self.config.d_bias_hidden, self.config.num_heads), rng, std)
            self._zeros(f"{prefix}.bias.b2", (self.config.num_heads,))

    def _init_block_tail(self, prefix: str, norms: tuple[str, ...], rng, std) -> None:
        d = self.config.d_model
        for ln in norms:
            self._ones(f"{prefix}.{ln}.g", (d,))
            self._zeros(f"{prefix}.{ln}.b", (d,))
        self._weight(f"{prefix}.ffn.w1", (d, self.config.d_ffn), rng, std)
        self._zeros(f"{prefix}.ffn.b1", (self.config.d_ffn,))
        self._weight(f"{prefix}.ffn.w2", (self.config.d_ffn, d), rng, std)
        self._zeros(f"{prefix}.ffn.b2", (d,))

    def p(self, name: str) -> Tensor:
        return self._params[name]

    def parameters(self) -> list[Parameter]:
        return [Parameter(n, t) for n, t in self._params.items()]

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        """Backbone embeddings vs newly added layers (separate LRs)."""
        groups: dict[str, list[Parameter]] = {"backbone": [], "new": []}
        for p in self.parameters():
            groups["backbone" if p.name.startswith("backbone.") else "new"].append(p)
        return groups

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(tensors)
        extra = set(tensors) - set(self._params)
        if missing or extra:
            raise ValueError(
                f"checkpoint/config mismatch: missing tensors {sorted(missing)}, "
                f"unexpected tensors {sorted(extra)}"
            )
        for name, t in self._params.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"tensor {name!r}: checkpoint shape {arr.shape} does not match "
                    f"model shape {t.data.shape}"
                )
            t.data = arr
            t.zero_grad()

    # ------------------------------------------------------------------
    # per-document precomputation

    def prepare(self, doc: Document) -> DocFeatures:
        c = self.config
        entity_ids = [e.id for e in doc.entities]
        index_of = {eid: i for i, eid in enumerate(entity_ids)}

        tokens: dict[int, list[int]] = {eid: [] for eid in entity_ids}
        for eid, wi in reading_order(doc):
            word = doc.entities[index_of[eid]].words[wi]
            tokens[eid].extend(
                hash_token(t, c.hash_vocab_size) for t in tokenize(word.text)
            )
        token_ids = [np.array(tokens[eid], dtype=np.intp) for eid in entity_ids]

        label_ids = np.array(
            [LABEL_TO_INDEX[e.label] for e in doc.entities], dtype=np.intp
        )
        boxes = [e.box for e in doc.entities]
        cols = {
            "x1": [b.x1 for b in boxes],
            "y1": [b.y1 for b in boxes],
            "x2": [b.x2 for b in boxes],
            "y2": [b.y2 for b in boxes],
            "w": [b.width for b in boxes],
            "h": [b.height for b in boxes],
        }
        pos_ids = np.stack(
            [np.array(cols[name], dtype=np.intp) for name in c.pos_table_names], axis=1
        )
        rfeat = pairwise_feature_matrix(boxes)
        return DocFeatures(
            doc, entity_ids, index_of, token_ids, label_ids, pos_ids, rfeat, boxes
        )

    # ------------------------------------------------------------------
    # forward pieces

    def _embed_matrices(self, feats: DocFeatures) -> tuple[Tensor, Tensor]:
        """Content and 2D positional embedding matrices, each (N, d_model)."""
        c = self.config
        table = self.p("backbone.token_embed")
        rows = []
        for ids in feats.token_ids:
            if ids.size:
                rows.append(table.take_rows(ids).mean(axis=0, keepdims=True))
            else:
                rows.append(self.p("backbone.empty_token"))
        content = concat(rows, axis=0) if len(rows) > 1 else rows[0]
        if c.use_gold_labels:
            labels = self.p("label_embed").take_rows(feats.label_ids)
            content = concat([content, labels], axis=1)
        pos = concat(
            [
                self.p(f"pos.{name}").take_rows(feats.pos_ids[:, k])
                for k, name in enumerate(c.pos_table_names)
            ],
            axis=1,
        )
        return content, pos

    def embed_entities(self, doc: Document | DocFeatures) -> list[EntityRepresentation]:
        """Per-entity content and positional vectors (averaged token hash
        embeddings, optionally concatenated with the gold label embedding)."""
        feats = doc if isinstance(doc, DocFeatures) else self.prepare(doc)
        content, pos = self._embed_matrices(feats)
        d = self.config.d_model
        return [
            EntityRepresentation(
                content.take_rows([i]).reshape((d,)),
                pos.take_rows([i]).reshape((d,)),
                feats.boxes[i],
            )
            for i in range(feats.n)
        ]

    def attention_logits(
        self,
        prefix: str,
        q_content: Tensor,
        q_pos: Tensor,
        kv_content: Tensor,
        kv_pos: Tensor,
        rfeat: np.ndarray,
    ) -> Tensor:
        """Pre-softmax attention scores, shape (num_heads, nq, nk).

        Content and positional projections stay separate so each score
        decomposes as content dot product + position dot product (scaled
        by 1/sqrt(d_head)) + per-head learned bias from the box feature.
        """
        c = self.config
        nq = q_content.data.shape[0]
        nk = kv_content.data.shape[0]
        nh, dh = c.num_heads, c.d_model // c.num_heads

        def heads(t: Tensor, n: int) -> Tensor:
            return t.reshape((n, nh, dh)).transpose((1, 0, 2))

        qc = heads(q_content @ self.p(f"{prefix}.wq_c"), nq)
        qp = heads(q_pos @ self.p(f"{prefix}.wq_p"), nq)
        kc = heads(kv_content @ self.p(f"{prefix}.wk_c"), nk)
        kp = heads(kv_pos @ self.p(f"{prefix}.wk_p"), nk)
        scale = 1.0 / math.sqrt(2 * dh)  # query is content (+) position per head
        scores = (
            qc @ kc.transpose((0, 2, 1)) + qp @ kp.transpose((0, 2, 1))
        ) * scale
        if c.use_spatial_bias:
            flat = Tensor(rfeat.reshape(nq * nk, FEATURE_DIM))
            b = (flat @ self.p(f"{prefix}.bias.w1") + self.p(f"{prefix}.bias.b1")).relu()
            b = b @ self.p(f"{prefix}.bias.w2") + self.p(f"{prefix}.bias.b2")
            scores = scores + b.reshape((nq, nk, nh)).transpose((2, 0, 1))
        return scores

    def _attention(
        self, prefix, q_content, q_pos, kv_content, kv_pos, rfeat,
        train, rng, records,
    ) -> Tensor:
        c = self.config
        nq = q_content.data.shape[0]
        nk = kv_content.data.shape[0]
        nh, dh = c.num_heads, c.d_model // c.num_heads
        scores = self.attention_logits(prefix, q_content, q_pos, kv_content, kv_pos, rfeat)
        probs = scores.softmax(axis=-1)
        if records is not None:
            records.append(probs.data.copy())
        v = (kv_content @ self.p(f"{prefix}.wv")).reshape((nk, nh, dh)).transpose((1, 0, 2))
        ctx = (probs @ v).transpose((1, 0, 2)).reshape((nq, c.d_model))
        out = ctx @ self.p(f"{prefix}.wo") + self.p(f"{prefix}.bo")
        return out.dropout(c.dropout_rate, train, rng)

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return x.layer_norm(axis=-1) * self.p(f"{prefix}.g") + self.p(f"{prefix}.b")

    def _ffn(self, prefix: str, x: Tensor, train, rng) -> Tensor:
        h = (x @ self.p(f"{prefix}.ffn.w1") + self.p(f"{prefix}.ffn.b1")).relu()
        h = h @ self.p(f"{prefix}.ffn.w2") + self.p(f"{prefix}.ffn.b2")
        return h.dropout(self.config.dropout_rate, train, rng)

    def encoder_forward(
        self, content: Tensor, pos: Tensor, rfeat: np.ndarray,
        train: bool = False, rng=None, records=None,
    ) -> Tensor:
        x = content
        for i in range(self.config.num_encoder_layers):
            x = self._ln(
                f"enc.{i}.ln1",
                x + self._attention(f"enc.{i}.self", x, pos, x, pos, rfeat, train, rng, records),
            )
            x = self._ln(f"enc.{i}.ln2", x + self._ffn(f"enc.{i}", x, train, rng))
        return x

    def decoder_forward(
        self, q_state: Tensor, q_pos: Tensor, H: Tensor, h_pos: Tensor,
        r_self: np.ndarray, r_cross: np.ndarray,
        train: bool = False, rng=None, records=None,
    ) -> Tensor:
        """Maskless self-attention among questions plus cross-attention to
        all entities; questions carry no sequence-order encoding, only
        their 2D box embeddings."""
        q = q_state
        for i in range(self.config.num_decoder_layers):
            q = self._ln(
                f"dec.{i}.ln1",
                q + self._attention(f"dec.{i}.self", q, q_pos, q, q_pos, r_self, train, rng, records),
            )
            q = self._ln(
                f"dec.{i}.ln2",
                q + self._attention(f"dec.{i}.cross", q, q_pos, H, h_pos, r_cross, train, rng, records),
            )
            q = self._ln(f"dec.{i}.ln3", q + self._ffn(f"dec.{i}", q, train, rng))
        return q

    def question_logits(self, H: Tensor) -> Tensor:
        return H @ self.p("question_head.w") + self.p("question_head.b")

    def identify_questions(
        self, H: Tensor, feats: DocFeatures
    ) -> tuple[np.ndarray, list[int]]:
        """Per-entity 4-way label distribution and the question id set.

        Predicted labels drive the set unless use_gold_labels is on, in
        which case the document's gold labels do.
        """
        logits = self.question_logits(H)
        probs = np.exp(logits.log_softmax(axis=-1).data)
        predicted = probs.argmax(axis=-1)
        base = feats.label_ids if self.config.use_gold_labels else predicted
        return probs, select_question_ids(base, feats.entity_ids, self.config.question_role)

    def _pair_head(self, head: str, q: Tensor, h: Tensor, rfeat: np.ndarray) -> Tensor:
        """Sum of question, entity and projected box-feature vectors fed
        through a two-layer MLP to one logit per (question, entity)."""
        d = self.config.d_model
        m = q.data.shape[0]
        n = h.data.shape[0]
        flat = Tensor(rfeat.reshape(m * n, FEATURE_DIM))
        feat = (flat @ self.p(f"{head}.feat.w1") + self.p(f"{head}.feat.b1")).relu()
        feat = feat @ self.p(f"{head}.feat.w2") + self.p(f"{head}.feat.b2")
        pair = q.reshape((m, 1, d)) + h.reshape((1, n, d)) + feat.reshape((m, n, d))
        z = (pair @ self.p(f"{head}.mlp.w1") + self.p(f"{head}.mlp.b1")).relu()
        z = z @ self.p(f"{head}.mlp.w2") + self.p(f"{head}.mlp.b2")
        return z.reshape((m, n))

    def coarse_scores(self, Q: Tensor, H: Tensor, rfeat: np.ndarray) -> Tensor:
        """Sigmoid likelihood of each entity answering each question, (M, N)."""
        return self._pair_head("coarse", Q, H, rfeat).sigmoid()

    def fine_logits(self, Q: Tensor, H: Tensor, cand_pos: np.ndarray,
                    rfeat: np.ndarray) -> Tensor:
        """Re-ranking logits over each question's K candidates, (M, K)."""
        d = self.config.d_model
        m, k = cand_pos.shape
        hc = H.take_rows(cand_pos.reshape(-1)).reshape((m, k, d))
        flat = Tensor(rfeat.reshape(m * k, FEATURE_DIM))
        feat = (flat @ self.p("fine.feat.w1") + self.p("fine.feat.b1")).relu()
        feat = feat @ self.p("fine.feat.w2") + self.p("fine.feat.b2")
        pair = Q.reshape((m, 1, d)) + hc + feat.reshape((m, k, d))
        z = (pair @ self.p("fine.mlp.w1") + self.p("fine.mlp.b1")).relu()
        z = z @ self.p("fine.mlp.w2") + self.p("fine.mlp.b2")
        return z.reshape((m, k))

    # ------------------------------------------------------------------
    # full pipeline

    def forward(
        self,
        feats: DocFeatures,
        *,
        question_ids: list[int] | None = None,
        candidate_fn: Callable[[int, int, np.ndarray], list[int]] | None = None,
        train: bool = False,
        rng: np.random.Generator | None = None,
        record_attention: bool = False,
    ) -> ForwardResult:
        c = self.config
        records: list[np.ndarray] | None = [] if record_attention else None
        content, pos = self._embed_matrices(feats)
        H = self.encoder_forward(content, pos, feats.rfeat, train, rng, records)

        label_logits = self.question_logits(H)
        label_probs = np.exp(label_logits.log_softmax(axis=-1).data)
        predicted = label_probs.argmax(axis=-1)
        if question_ids is None:
            base = feats.label_ids if c.use_gold_labels else predicted
            question_ids = select_question_ids(base, feats.entity_ids, c.question_role)

        empty = ForwardResult(
            label_logits, label_probs, predicted, H, question_ids,
            None, None, [], None, None, records,
        )
        if not question_ids:
            return empty

        q_positions = np.array([feats.index_of[eid] for eid in question_ids])
        q_content = H.take_rows(q_positions)
        q_pos2d = pos.take_rows(q_positions)
        if c.num_decoder_layers > 0:
            Q = self.decoder_forward(
                q_content, q_pos2d, H, pos,
                feats.rfeat[np.ix_(q_positions, q_positions)],
                feats.rfeat[q_positions],
                train, rng, records,
            )
        else:
            Q = q_content

        coarse = self.coarse_scores(Q, H, feats.rfeat[q_positions])
        coarse_np = coarse.data

        candidates: list[list[int]] = []
        for i, qid in enumerate(question_ids):
            if candidate_fn is not None:
                cands = candidate_fn(i, qid, coarse_np[i])
            else:
                cands = topk_candidates(
                    coarse_np[i], c.top_k, entity_ids=feats.entity_ids, exclude=qid
                )
            candidates.append(cands)

        widths = {len(cands) for cands in candidates}
        if len(widths) > 1:
            raise ValueError(f"candidate lists must share one width, got {sorted(widths)}")

        fine_logits = fine_probs = None
        if c.use_coarse_to_fine and widths and widths != {0}:
            cand_pos = np.array(
                [[feats.index_of[eid] for eid in cands] for cands in candidates]
            )
            r_fine = feats.rfeat[q_positions[:, None], cand_pos]
            fine_logits = self.fine_logits(Q, H, cand_pos, r_fine)
            fine_probs = fine_logits.softmax(axis=-1)

        return ForwardResult(
            label_logits, label_probs, predicted, H, question_ids,
            Q, coarse, candidates, fine_logits, fine_probs, records,
        )


def predict(doc: Document, model: KVPFormerModel,
            feats: DocFeatures | None = None) -> Prediction:
    """Run the full pipeline and emit directed key-value pairs.

    For each question the fine distribution's argmax picks the answer
    (or the top coarse candidate when coarse-to-fine is off); a pair is
    emitted only when the chosen candidate's coarse score clears the
    accept threshold.
    """
    c = model.config
    if feats is None:
        feats = model.prepare(doc)
    res = model.forward(feats, train=False)
    if res.coarse is None:
        return Prediction(
            res.label_probs, res.question_ids,
            np.zeros((0, feats.n)), [], [], set(),
        )

    fine_rows: list[np.ndarray] = []
    pairs: set[RelationPair] = set()
    for i, qid in enumerate(res.question_ids):
        cands = res.candidates[i]
        if res.fine_probs is not None:
            fine_rows.append(res.fine_probs.data[i].copy())
        if not cands:
            continue
        if c.use_coarse_to_fine and res.fine_probs is not None:
            slot = int(np.argmax(res.fine_probs.data[i]))
        else:
            slot = 0  # candidates are sorted by descending coarse score
        answer = cands[slot]
        if res.coarse.data[i, feats.index_of[answer]] < c.coarse_accept_threshold:
            continue
        if c.question_role == "answer_as_question":
            pairs.add(RelationPair(key_id=answer, value_id=qid))
        else:
            pairs.add(RelationPair(key_id=qid, value_id=answer))

    return Prediction(
        res.label_probs, res.question_ids, res.coarse.data.copy(),
        res.candidates, fine_rows, pairs,
    )
