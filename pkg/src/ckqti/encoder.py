"""Document encoder: stacked Conformer layers.

A Conformer layer is a Transformer block whose self-attention is replaced by
the separable form ``softmax_rows(Q) @ (softmax_over_positions(K^T) @ V)`` and
which runs a grouped convolution over the sequence before attending.  The
standard quadratic attention and a plain Transformer layer are kept as the
baseline for the memory benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ckqti import probe
from ckqti.config import Config
from ckqti.tensor import (
    Tensor,
    concat,
    dropout,
    grouped_conv1d,
    layer_norm,
    matmul,
    relu,
    scale,
    softmax,
    swapaxes,
)
from ckqti.text import TokenSequence, embed

ATTENTION_GROUP = "attn"


def standard_self_attention(q: Tensor, k: Tensor, v: Tensor,
                            key_mask: np.ndarray | None = None) -> Tensor:
    """``softmax(Q K^T / sqrt(d_key)) V``; materializes the n x n matrix."""
    d_key = q.shape[-1]
    with probe.label("attn_logits"):
        logits = matmul(scale(q, 1.0 / math.sqrt(d_key)), swapaxes(k, -1, -2))
    with probe.label("attn_matrix"):
        weights = softmax(logits, axis=-1, mask=key_mask)
    del logits
    with probe.label("attn_output"):
        return matmul(weights, v)


def separable_self_attention(q: Tensor, k: Tensor, v: Tensor,
                             key_mask: np.ndarray | None = None) -> Tensor:
    """``softmax(Q) @ A`` with ``A = softmax(K^T) @ V``.

    softmax(Q) normalizes each position over the key features; softmax(K^T)
    normalizes each key feature over positions.  ``A`` is d_key x d_value, so
    nothing of size n x n is ever allocated.
    """
    with probe.label("attn_phi_k"):
        phi_k = softmax(swapaxes(k, -1, -2), axis=-1, mask=key_mask)
    with probe.label("attn_summary"):
        summary = matmul(phi_k, v)
    del phi_k
    with probe.label("attn_phi_q"):
        phi_q = softmax(q, axis=-1)
    with probe.label("attn_output"):
        return matmul(phi_q, summary)


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AttentionBlock:
    """Multi-head projections shared by both layer kinds."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln1_gain: Tensor
    ln1_shift: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor

    @staticmethod
    def init_params(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
        h, f = cfg.model_dim, cfg.ff_dim
        p = {}
        for name in ("q", "k", "v", "o"):
            p[f"w{name}"] = _uniform(rng, h, (h, h))
            p[f"b{name}"] = np.zeros(h)
        p["ln1_gain"], p["ln1_shift"] = np.ones(h), np.zeros(h)
        p["ff1_w"], p["ff1_b"] = _uniform(rng, h, (h, f)), np.zeros(f)
        p["ff2_w"], p["ff2_b"] = _uniform(rng, f, (f, h)), np.zeros(h)
        p["ln2_gain"], p["ln2_shift"] = np.ones(h), np.zeros(h)
        return p

    def attend(self, x: Tensor, mask: np.ndarray, cfg: Config, separable: bool) -> Tensor:
        lead, n, h = x.shape[:-2], x.shape[-2], x.shape[-1]
        heads, d_key = cfg.heads, cfg.d_key

        def split(t: Tensor) -> Tensor:
            t = t.reshape(*lead, n, heads, d_key)
            return swapaxes(t, -2, -3)

        q = split(matmul(x, self.wq) + self.bq)
        k = split(matmul(x, self.wk) + self.bk)
        v = split(matmul(x, self.wv) + self.bv)
        key_mask = mask[..., None, None, :]
        attention = separable_self_attention if separable else standard_self_attention
        chunk = cfg.head_batch or heads
        if chunk >= heads:
            out = attention(q, k, v, key_mask)
        else:
            parts = []
            for start in range(0, heads, chunk):
                sl = (Ellipsis, slice(start, start + chunk), slice(None), slice(None))
                parts.append(attention(q[sl], k[sl], v[sl], key_mask))
            out = concat(parts, axis=-3)
        out = swapaxes(out, -2, -3).reshape(*lead, n, h)
        return matmul(out, self.wo) + self.bo

    def finish(self, x: Tensor, attended: Tensor, cfg: Config,
               rng: np.random.Generator | None) -> Tensor:
        p = cfg.dropout
        y = layer_norm(x + dropout(attended, p, rng), self.ln1_gain, self.ln1_shift)
        f = matmul(relu(matmul(y, self.ff1_w) + self.ff1_b), self.ff2_w) + self.ff2_b
        return layer_norm(y + dropout(f, p, rng), self.ln2_gain, self.ln2_shift)


@dataclass
class ConformerLayer(AttentionBlock):
    conv_w: Tensor = None
    conv_b: Tensor = None

    @staticmethod
    def init_params(cfg: Config, rng: np.random.Generator) -> dict[str, np.ndarray]:
        p = AttentionBlock.init_params(cfg, rng)
        h, g, w = cfg.model_dim, cfg.conv_groups, cfg.conv_window
        p["conv_w"] = _uniform(rng, (h // g) * w, (h, h // g, w))
        p["conv_b"] = np.zeros(h)
        return p


@dataclass
class TransformerLayer(AttentionBlock):
    pass


def bind(cls, params: dict[str, Tensor], prefix: str):
    names = [f for f in cls.__dataclass_fields__]
    return cls(**{n: params[prefix + n] for n in names})


def conformer_forward(x: Tensor, layer: ConformerLayer, cfg: Config,
                      mask: np.ndarray | None = None,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Grouped conv, separable attention, residual + norm, feed-forward, residual + norm.

    ``mask`` marks real (non-padding) positions, shape ``x.shape[:-1]``.
    ``rng`` enables dropout (training mode); ``None`` is inference.
    """
    if mask is None:
        mask = np.ones(x.shape[:-1], dtype=bool)
    c = grouped_conv1d(x, layer.conv_w, layer.conv_b, cfg.conv_groups)
    attended = layer.attend(c, mask, cfg, separable=True)
    return layer.finish(c, attended, cfg, rng)


def transformer_forward(x: Tensor, layer: TransformerLayer, cfg: Config,
                        mask: np.ndarray | None = None,
                        rng: np.random.Generator | None = None) -> Tensor:
    if mask is None:
        mask = np.ones(x.shape[:-1], dtype=bool)
    attended = layer.attend(x, mask, cfg, separable=False)
    return layer.finish(x, attended, cfg, rng)


def encode_document(doc: TokenSequence | np.ndarray, table: Tensor,
                    layers: list[ConformerLayer], cfg: Config,
                    mask: np.ndarray | None = None,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Embed and run the Conformer stack, zeroing padding around every layer.

    ``doc`` may be a single sequence or an id array of shape ``(batch, n)``.
    """
    ids = np.asarray(doc.ids if isinstance(doc, TokenSequence) else doc, dtype=np.int64)
    if mask is None:
        mask = ids != 0
    keep = Tensor(mask[..., None].astype(np.float64))
    x = embed(ids, table)
    for layer in layers:
        x = conformer_forward(x * keep, layer, cfg, mask, rng) * keep
    return x
