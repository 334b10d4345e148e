"""Per-query-term relevance: latent kernel matching blended with learned BM25.

Every term score depends only on that term and the document, so a query score
is the plain sum of its term scores and term scores can be precomputed into an
inverted index.  Terms that are out of vocabulary or absent from the document
score exactly 0 (the occurrence gate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ckqti.config import Config
from ckqti.encoder import ConformerLayer, bind, encode_document
from ckqti.tensor import (
    Tensor,
    clamp_min,
    cosine_rows,
    div,
    exp,
    log,
    matmul,
    relu,
    sqrt,
    sum_,
)
from ckqti.text import OOV_ID, embed, init_embeddings

POOL_FLOOR = 1e-10
EPS = 1e-6
VAR_FLOOR = 1e-5
MOMENTUM = 0.1


class UninitializedStatistics(RuntimeError):
    def __init__(self, what: str = "") -> None:
        super().__init__(f"uninitialized normalization statistics{': ' + what if what else ''}")


@dataclass(frozen=True)
class KernelBank:
    mus: np.ndarray
    sigmas: np.ndarray

    @classmethod
    def default(cls, k: int = 10) -> "KernelBank":
        """One exact-match kernel at 1.0; the rest evenly spaced on [-1, 1)."""
        soft = -1.0 + 2.0 * np.arange(k - 1) / (k - 1)
        mus = np.append(soft, 1.0)
        sigmas = np.append(np.full(k - 1, 0.1), 0.001)
        return cls(mus, sigmas)

    def __len__(self) -> int:
        return len(self.mus)


@dataclass(frozen=True)
class WindowConfig:
    window: int = 300
    stride: int = 100
    top_windows: int = 3

    def __post_init__(self) -> None:
        if not self.window >= self.stride >= 1:
            raise ValueError("need window >= stride >= 1")


def window_starts(length: int, window: int, stride: int) -> list[int]:
    """Stride-aligned full windows, plus a right-aligned one if the tail is uncovered."""
    if length <= window:
        return [0]
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] + window < length:
        starts.append(length - window)
    return starts


def window_membership(lengths: np.ndarray, n: int, cfg: WindowConfig) -> tuple[np.ndarray, np.ndarray]:
    """0/1 matrices ``(batch, n, W)`` plus window validity ``(batch, W)``."""
    per_doc = [window_starts(max(int(L), 1), cfg.window, cfg.stride) for L in lengths]
    w_max = max(len(s) for s in per_doc)
    member = np.zeros((len(lengths), n, w_max))
    valid = np.zeros((len(lengths), w_max), dtype=bool)
    for b, starts in enumerate(per_doc):
        for i, s in enumerate(starts):
            member[b, s:s + cfg.window, i] = 1.0
            valid[b, i] = True
    return member, valid


def kernel_activations(x: Tensor, bank: KernelBank, mask: np.ndarray | None) -> Tensor:
    """``exp(-(x - mu)^2 / 2 sigma^2)`` per position and kernel, masked: ``(..., n, k)``."""
    diff = x.reshape(*x.shape, 1) - Tensor(bank.mus)
    act = exp(diff * diff * Tensor(-0.5 / bank.sigmas ** 2))
    if mask is not None:
        act = act * Tensor(np.asarray(mask, dtype=np.float64)[..., None])
    return act


def kernel_pool(row: Tensor, bank: KernelBank, mask: np.ndarray | None = None) -> Tensor:
    """Log of the summed kernel activations over unmasked positions: ``(..., k)``."""
    return log(sum_(kernel_activations(row, bank, mask), axis=-2) + POOL_FLOOR)


@dataclass
class Aggregator:
    """Two-layer k -> k -> 1 ReLU network shared by every query term."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @staticmethod
    def init_params(k: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        bound = 1.0 / math.sqrt(k)
        return {
            "w1": rng.uniform(-bound, bound, (k, k)),
            "b1": np.zeros(k),
            "w2": rng.uniform(-bound, bound, (k, 1)),
            "b2": np.zeros(1),
        }

    def __call__(self, features: Tensor) -> Tensor:
        hidden = relu(matmul(features, self.w1) + self.b1)
        out = matmul(hidden, self.w2) + self.b2
        return out.reshape(out.shape[:-1])


def latent_term_score(features: Tensor, agg: Aggregator) -> Tensor:
    return agg(features)


def windowed_kernel_pool(rows: Tensor, bank: KernelBank, cfg: WindowConfig,
                         mask: np.ndarray, agg: Aggregator) -> Tensor:
    """Kernel features per window; keep the top-r windows by aggregator score and average.

    rows: ``(batch, q, n)`` interaction rows; mask: ``(batch, n)`` real document
    positions.  Returns ``(batch, q, k)``.
    """
    batch, _, n = rows.shape
    lengths = mask.sum(axis=-1)
    member, valid = window_membership(lengths, n, cfg)
    act = kernel_activations(rows, bank, mask[:, None, :])           # (B, q, n, k)
    sums = matmul(act.transpose(0, 1, 3, 2), Tensor(member[:, None]))  # (B, q, k, W)
    feats = log(sums + POOL_FLOOR).transpose(0, 1, 3, 2)             # (B, q, W, k)
    if feats.shape[2] == 1:
        return feats.reshape(batch, rows.shape[1], len(bank))
    scores = agg(feats).data                                          # (B, q, W)
    scores = np.where(valid[:, None, :], scores, -np.inf)
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :cfg.top_windows]
    chosen = np.zeros_like(scores)
    np.put_along_axis(chosen, order, 1.0, axis=-1)
    chosen *= valid[:, None, :]
    chosen /= chosen.sum(axis=-1, keepdims=True)
    return sum_(feats * Tensor(chosen[..., None]), axis=-2)


@dataclass
class NormState:
    """Running statistics for one BatchNorm or BatchScale channel."""

    mean: float = 0.0
    var: float = 1.0
    initialized: bool = False

    def update(self, mean: float, var: float | None = None) -> None:
        if not self.initialized:
            self.mean, self.initialized = mean, True
            if var is not None:
                self.var = var
            return
        self.mean = (1.0 - MOMENTUM) * self.mean + MOMENTUM * mean
        if var is not None:
            self.var = (1.0 - MOMENTUM) * self.var + MOMENTUM * var


def _as_mask(mask, shape) -> np.ndarray:
    return np.ones(shape, dtype=bool) if mask is None else np.broadcast_to(mask, shape)


def batch_norm(x: Tensor, state: NormState, training: bool, mask: np.ndarray | None = None,
               update: bool = True) -> Tensor:
    """``(x - E[x]) / sqrt(Var[x])`` over the unmasked entries.

    Training uses population batch statistics (variance floored at 1e-5) and
    folds them into ``state``; inference uses ``state``.
    """
    m = _as_mask(mask, x.shape)
    if training:
        count = int(m.sum())
        if count < 2:
            raise ValueError(f"batch_norm in training mode needs >= 2 entries, got {count}")
        w = Tensor(m.astype(np.float64))
        mu = sum_(x * w) * (1.0 / count)
        centered = x - mu
        var = sum_(centered * centered * w) * (1.0 / count)
        out = div(centered, sqrt(clamp_min(var, VAR_FLOOR)))
        if update:
            state.update(mu.item(), max(var.item(), VAR_FLOOR))
        return out
    if not state.initialized:
        raise UninitializedStatistics("batch_norm")
    return (x - state.mean) * (1.0 / math.sqrt(max(state.var, VAR_FLOOR)))


def batch_scale(x: Tensor, state: NormState, training: bool, mask: np.ndarray | None = None,
                update: bool = True) -> Tensor:
    """``x / (E[x] + eps)`` for non-negative inputs."""
    if np.any(x.data < 0):
        raise ValueError("batch_scale expects non-negative inputs")
    m = _as_mask(mask, x.shape)
    if training:
        count = int(m.sum())
        if count < 1:
            raise ValueError("batch_scale in training mode needs at least one entry")
        mu = sum_(x * Tensor(m.astype(np.float64))) * (1.0 / count)
        if update:
            state.update(mu.item())
        return div(x, mu + EPS)
    if not state.initialized:
        raise UninitializedStatistics("batch_scale")
    return x * (1.0 / (state.mean + EPS))


def explicit_term_score(idf, tf_scaled: Tensor, dlen_scaled: Tensor,
                        w_dlen: Tensor, b_dlen: Tensor) -> Tensor:
    """Learned BM25: ``idf * tf / (tf + relu(w * dlen + b) + eps)`` on batch-scaled inputs."""
    saturation = relu(dlen_scaled * w_dlen + b_dlen)
    return div(tf_scaled * idf, tf_scaled + saturation + EPS)


def idf(num_docs: int, df) -> np.ndarray:
    df = np.asarray(df, dtype=np.float64)
    return np.log((num_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class DuetWeights:
    w1: Tensor
    w2: Tensor
    b: Tensor


def duet_combine(latent: Tensor | None, explicit: Tensor | None, w: DuetWeights,
                 norms: "Statistics", training: bool, mask: np.ndarray | None = None,
                 update: bool = True) -> Tensor:
    """``w1 * BN(latent) + w2 * BN(explicit) + b``; a ``None`` channel is left out."""
    out = None
    if latent is not None:
        out = batch_norm(latent, norms.latent, training, mask, update) * w.w1
    if explicit is not None:
        term = batch_norm(explicit, norms.explicit, training, mask, update) * w.w2
        out = term if out is None else out + term
    return out + w.b


@dataclass
class Statistics:
    latent: NormState = field(default_factory=NormState)
    explicit: NormState = field(default_factory=NormState)
    tf: NormState = field(default_factory=NormState)
    dlen: NormState = field(default_factory=NormState)
    frozen: bool = False

    def channels(self) -> dict[str, NormState]:
        return {"latent": self.latent, "explicit": self.explicit, "tf": self.tf, "dlen": self.dlen}


@dataclass
class ScoringBatch:
    """Aligned (query, document) pairs.

    query_ids ``(B, q)`` and doc_ids ``(B, n)`` are padded with 0;
    tf ``(B, q)`` counts each query term in the untruncated document;
    doc_len ``(B,)`` is the untruncated length; idf ``(B, q)``.
    """

    query_ids: np.ndarray
    doc_ids: np.ndarray
    tf: np.ndarray
    doc_len: np.ndarray
    idf: np.ndarray

    @property
    def gate(self) -> np.ndarray:
        return (self.query_ids > OOV_ID) & (self.tf > 0)

    def __len__(self) -> int:
        return self.query_ids.shape[0]


@dataclass
class TermScores:
    """Per-term components; ``combined`` is zero wherever ``gate`` is off."""

    latent: Tensor | None
    explicit: Tensor | None
    combined: Tensor
    gate: np.ndarray


class CKModel:
    """Conformer-Kernel scorer with query term independence."""

    def __init__(self, cfg: Config, params: dict[str, Tensor], stats: Statistics | None = None):
        self.cfg = cfg
        self.params = params
        self.stats = stats or Statistics()
        self.bank = KernelBank.default(cfg.kernels)
        self.windows = WindowConfig(cfg.pool_window, cfg.pool_stride, cfg.top_windows)

    @classmethod
    def init(cls, cfg: Config, vocab_size: int, seed: int | None = None) -> "CKModel":
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        raw: dict[str, np.ndarray] = {"embedding": init_embeddings(vocab_size, cfg.model_dim, rng)}
        for i in range(cfg.layers):
            for k, v in ConformerLayer.init_params(cfg, rng).items():
                raw[f"layer{i}.{k}"] = v
        for k, v in Aggregator.init_params(cfg.kernels, rng).items():
            raw[f"agg.{k}"] = v
        raw.update({
            "duet.w1": np.ones(1), "duet.w2": np.ones(1), "duet.b": np.zeros(1),
            "bm25.w_dlen": np.ones(1), "bm25.b_dlen": np.zeros(1),
        })
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}
        return cls(cfg, params)

    # -- parameter views ------------------------------------------------------
    @property
    def table(self) -> Tensor:
        return self.params["embedding"]

    @property
    def layers(self) -> list[ConformerLayer]:
        return [bind(ConformerLayer, self.params, f"layer{i}.") for i in range(self.cfg.layers)]

    @property
    def aggregator(self) -> Aggregator:
        return bind(Aggregator, self.params, "agg.")

    @property
    def duet(self) -> DuetWeights:
        return bind(DuetWeights, self.params, "duet.")

    # -- forward --------------------------------------------------------------
    def encode(self, doc_ids: np.ndarray, rng: np.random.Generator | None = None) -> Tensor:
        return encode_document(doc_ids, self.table, self.layers, self.cfg, rng=rng)

    def latent_scores(self, query_ids: np.ndarray, doc_enc: Tensor, doc_mask: np.ndarray) -> Tensor:
        """Raw aggregator output per query term, ``(B, q)``."""
        q_emb = embed(query_ids, self.table)
        rows = cosine_rows(q_emb, doc_enc)
        pooled = windowed_kernel_pool(rows, self.bank, self.windows, doc_mask, self.aggregator)
        return latent_term_score(pooled, self.aggregator)

    def explicit_scores(self, batch: ScoringBatch, training: bool, update: bool = True) -> Tensor:
        gate = batch.gate
        dlen = np.broadcast_to(batch.doc_len[:, None], batch.tf.shape).astype(np.float64)
        tf_s = batch_scale(Tensor(batch.tf.astype(np.float64)), self.stats.tf, training, gate, update)
        dl_s = batch_scale(Tensor(dlen), self.stats.dlen, training, gate, update)
        return explicit_term_score(Tensor(batch.idf), tf_s, dl_s,
                                   self.params["bm25.w_dlen"], self.params["bm25.b_dlen"])

    def term_scores(self, batch: ScoringBatch, training: bool = False,
                    rng: np.random.Generator | None = None,
                    doc_enc: Tensor | None = None) -> TermScores:
        gate = batch.gate
        update = training and not self.stats.frozen
        latent = explicit = None
        if self.cfg.latent_channel:
            if doc_enc is None:
                doc_enc = self.encode(batch.doc_ids, rng if training else None)
            latent = self.latent_scores(batch.query_ids, doc_enc, batch.doc_ids != 0)
        if self.cfg.explicit_channel:
            explicit = self.explicit_scores(batch, training, update)
        combined = duet_combine(latent, explicit, self.duet, self.stats, training, gate, update)
        combined = combined * Tensor(gate.astype(np.float64))
        return TermScores(latent, explicit, combined, gate)

    def score(self, batch: ScoringBatch, training: bool = False,
              rng: np.random.Generator | None = None,
              doc_enc: Tensor | None = None) -> Tensor:
        """Query-document scores ``(B,)``: the sum of the gated term scores."""
        return sum_(self.term_scores(batch, training, rng, doc_enc).combined, axis=-1)
