"""Toy vision encoder and decoder-only transformer.

The encoder is patchify + linear projection + learned per-patch position
embedding. The decoder is a stack of pre-norm blocks (masked multi-head
self-attention, then a GELU MLP, residual connections) with one shared
additive mask applied at every layer, followed by a final layer norm.
Learned absolute position embeddings cover the whole flattened sequence;
query tokens receive them like ordinary tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConfigError, NumericError, ShapeError
from .masking import AttentionMask, SequenceLayout, make_layout
from .tensor import (
    Parameter,
    Tensor,
    concat,
    gelu,
    layer_norm,
    masked_softmax,
    matmul,
    take_rows,
)

INIT_STD = 0.02


def _fan_in_gauss(rng: np.random.Generator, shape) -> np.ndarray:
    """Linear-layer init: normal with the variance of the standard
    uniform fan-in rule (sigma^2 = 1/(3*fan_in)). Embedding-scale init
    (INIT_STD) is too small for block internals and stalls training."""
    return rng.standard_normal(shape) / math.sqrt(3.0 * shape[0])


def _qkv_gauss(rng: np.random.Generator, shape) -> np.ndarray:
    """Attention input-projection init: sigma^2 = 1/(2*C), the variance a
    jointly-initialized stacked (3C, C) projection assigns each slice."""
    return rng.standard_normal(shape) / math.sqrt(2.0 * shape[0])


@dataclass(frozen=True)
class BackboneConfig:
    """Width / depth / sequence geometry of the toy model."""

    c: int = 64
    heads: int = 4
    layers: int = 2
    p: int = 16
    patch_dim: int = 48
    vocab: int = 33
    max_t: int = 160
    k: int = 40

    def __post_init__(self):
        if self.c % self.heads != 0:
            raise ConfigError(f"width {self.c} not divisible by {self.heads} heads")
        if self.k < 1:
            raise ConfigError(f"need at least one query per bank, got K={self.k}")
        for field in ("c", "heads", "layers", "p", "patch_dim", "vocab", "max_t"):
            if getattr(self, field) < (0 if field == "layers" else 1):
                raise ConfigError(f"{field} must be positive, got {getattr(self, field)}")


class QueryBank:
    """The two learnable query banks, each K rows of width C.

    Either side may be absent when the corresponding pathway is switched off;
    the sequence then simply omits that span."""

    def __init__(
        self,
        prefix: str,
        k: int,
        c: int,
        rng: np.random.Generator,
        dtype,
        with_metric: bool = True,
        with_struct: bool = True,
    ):
        self.metric = (
            Parameter(f"{prefix}.metric", _gauss(rng, (k, c)), dtype=dtype)
            if with_metric
            else None
        )
        self.struct = (
            Parameter(f"{prefix}.struct", _gauss(rng, (k, c)), dtype=dtype)
            if with_struct
            else None
        )

    def parameters(self) -> list[Parameter]:
        return [p for p in (self.metric, self.struct) if p is not None]


@dataclass
class EncodedScene:
    """Per-frame patch embeddings, each of shape (P, C)."""

    frames: list[Tensor]

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class BackboneOutputs:
    """Hidden states sliced out at the positions the layout records."""

    metric_states: Tensor | None  # (K, C)
    struct_states: Tensor | None  # (K, C)
    patch_states: list[Tensor]  # N tensors of (P, C)
    answer_logits: Tensor  # (L_a, V); empty when L_a == 0
    layout: SequenceLayout


def _gauss(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) * INIT_STD


class VisionEncoder:
    def __init__(self, prefix: str, cfg: BackboneConfig, rng, dtype):
        self.proj_w = Parameter(f"{prefix}.patch_proj.w", _gauss(rng, (cfg.patch_dim, cfg.c)), dtype=dtype)
        self.proj_b = Parameter(f"{prefix}.patch_proj.b", np.zeros(cfg.c), dtype=dtype)
        self.pos = Parameter(f"{prefix}.pos", _gauss(rng, (cfg.p, cfg.c)), dtype=dtype)
        self.cfg = cfg
        self.dtype = dtype

    def patchify(self, frame: np.ndarray) -> np.ndarray:
        """Cut an (H, W, 3) frame into P square tiles, row-major, each
        flattened to patch_dim. Frames already shaped (P, patch_dim) pass
        through unchanged."""
        cfg = self.cfg
        if frame.ndim == 2:
            if frame.shape != (cfg.p, cfg.patch_dim):
                raise ConfigError(
                    f"pre-patchified frame has shape {frame.shape}, "
                    f"expected ({cfg.p}, {cfg.patch_dim})"
                )
            return frame
        if frame.ndim != 3 or frame.shape[2] != 3:
            raise ConfigError(f"frame must be (H, W, 3), got {frame.shape}")
        h, w, _ = frame.shape
        side = math.isqrt(cfg.p)
        if side * side != cfg.p or h % side or w % side:
            raise ConfigError(
                f"frame {h}x{w} does not divide into {cfg.p} square patches"
            )
        th, tw = h // side, w // side
        if th * tw * 3 != cfg.patch_dim:
            raise ConfigError(
                f"patch pixels {th}x{tw}x3 != configured patch_dim {cfg.patch_dim}"
            )
        tiles = frame.reshape(side, th, side, tw, 3).swapaxes(1, 2)
        return tiles.reshape(cfg.p, cfg.patch_dim)

    def encode_frames(self, frames: list[np.ndarray]) -> EncodedScene:
        out = []
        for frame in frames:
            patches = Tensor(
                np.ascontiguousarray(self.patchify(np.asarray(frame))), dtype=self.dtype
            )
            emb = matmul(patches, self.proj_w) + self.proj_b + self.pos
            out.append(emb)
        return EncodedScene(out)

    def parameters(self) -> list[Parameter]:
        return [self.proj_w, self.proj_b, self.pos]


class MultiHeadAttention:
    def __init__(self, prefix: str, c: int, heads: int, rng, dtype):
        self.heads = heads
        self.head_dim = c // heads
        self.wq = Parameter(f"{prefix}.wq", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wk = Parameter(f"{prefix}.wk", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wv = Parameter(f"{prefix}.wv", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wo = Parameter(f"{prefix}.wo", _fan_in_gauss(rng, (c, c)), dtype=dtype)
        self.bq = Parameter(f"{prefix}.bq", np.zeros(c), dtype=dtype)
        self.bk = Parameter(f"{prefix}.bk", np.zeros(c), dtype=dtype)
        self.bv = Parameter(f"{prefix}.bv", np.zeros(c), dtype=dtype)
        self.bo = Parameter(f"{prefix}.bo", np.zeros(c), dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        q = matmul(x, self.wq) + self.bq
        k = matmul(x, self.wk) + self.bk
        v = matmul(x, self.wv) + self.bv
        scale = 1.0 / math.sqrt(self.head_dim)
        ctx = []
        for h in range(self.heads):
            cols = slice(h * self.head_dim, (h + 1) * self.head_dim)
            qh = q[:, cols] * scale
            kh = k[:, cols]
            scores = matmul(qh, kh.T)
            probs = masked_softmax(scores, mask)
            ctx.append(matmul(probs, v[:, cols]))
        return matmul(concat(ctx, axis=1), self.wo) + self.bo

    def parameters(self) -> list[Parameter]:
        return [self.wq, self.wk, self.wv, self.wo, self.bq, self.bk, self.bv, self.bo]


class Mlp:
    def __init__(self, prefix: str, c: int, rng, dtype, expansion: int = 4):
        hidden = expansion * c
        self.w1 = Parameter(f"{prefix}.w1", _fan_in_gauss(rng, (c, hidden)), dtype=dtype)
        self.b1 = Parameter(f"{prefix}.b1", np.zeros(hidden), dtype=dtype)
        self.w2 = Parameter(f"{prefix}.w2", _fan_in_gauss(rng, (hidden, c)), dtype=dtype)
        self.b2 = Parameter(f"{prefix}.b2", np.zeros(c), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(gelu(matmul(x, self.w1) + self.b1), self.w2) + self.b2

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]


class LayerNormParams:
    def __init__(self, prefix: str, c: int, dtype):
        self.g = Parameter(f"{prefix}.g", np.ones(c), dtype=dtype)
        self.b = Parameter(f"{prefix}.b", np.zeros(c), dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b)

    def parameters(self) -> list[Parameter]:
        return [self.g, self.b]


class Block:
    """Pre-norm transformer block: attention then MLP, both residual."""

    def __init__(self, prefix: str, cfg: BackboneConfig, rng, dtype):
        self.ln1 = LayerNormParams(f"{prefix}.ln1", cfg.c, dtype)
        self.attn = MultiHeadAttention(f"{prefix}.attn", cfg.c, cfg.heads, rng, dtype)
        self.ln2 = LayerNormParams(f"{prefix}.ln2", cfg.c, dtype)
        self.mlp = Mlp(f"{prefix}.mlp", cfg.c, rng, dtype)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.mlp(self.ln2(x))

    def parameters(self) -> list[Parameter]:
        return (
            self.ln1.parameters()
            + self.attn.parameters()
            + self.ln2.parameters()
            + self.mlp.parameters()
        )


class Backbone:
    """Embedding tables, block stack, final norm, and the unembedding."""

    def __init__(self, cfg: BackboneConfig, rng, dtype):
        self.cfg = cfg
        self.dtype = dtype
        self.tok_embed = Parameter("embed.tok", _gauss(rng, (cfg.vocab, cfg.c)), dtype=dtype)
        self.pos_embed = Parameter("embed.pos", _gauss(rng, (cfg.max_t, cfg.c)), dtype=dtype)
        self.blocks = [
            Block(f"backbone.block{i}", cfg, rng, dtype) for i in range(cfg.layers)
        ]
        self.final_ln = LayerNormParams("backbone.final_ln", cfg.c, dtype)
        self.unembed = Parameter("unembed.w", _gauss(rng, (cfg.c, cfg.vocab)), dtype=dtype)

    def assemble(
        self,
        scene: EncodedScene,
        query_rows: list[Tensor],
        question_ids: list[int],
        answer_ids: list[int],
    ) -> tuple[Tensor, SequenceLayout]:
        """Concatenate [visual frames, metric bank, struct bank, question,
        answer] and add absolute position embeddings over the full length."""
        if not question_ids:
            raise ConfigError("question must be nonempty")
        n_metric = query_rows[0].shape[0] if len(query_rows) > 0 and query_rows[0] is not None else 0
        n_struct = query_rows[1].shape[0] if len(query_rows) > 1 and query_rows[1] is not None else 0
        layout = make_layout(
            n_frames=len(scene.frames),
            patches_per_frame=self.cfg.p,
            n_metric=n_metric,
            n_struct=n_struct,
            len_question=len(question_ids),
            len_answer=len(answer_ids),
        )
        if layout.total > self.cfg.max_t:
            raise CapacityError(
                f"sequence length {layout.total} exceeds max_t {self.cfg.max_t}"
            )
        parts = list(scene.frames)
        for rows in query_rows:
            if rows is not None:
                parts.append(rows)
        text_ids = list(question_ids) + list(answer_ids)
        parts.append(take_rows(self.tok_embed, text_ids))
        embeds = concat(parts, axis=0) + self.pos_embed[: layout.total, :]
        return embeds, layout

    def forward(self, embeds: Tensor, mask: AttentionMask | np.ndarray) -> Tensor:
        """Run the block stack under one shared mask, then the final norm."""
        m = mask.as_dtype(self.dtype) if isinstance(mask, AttentionMask) else mask
        if m.shape != (embeds.shape[0], embeds.shape[0]):
            raise ShapeError(
                f"mask shape {m.shape} does not match sequence length {embeds.shape[0]}"
            )
        x = embeds
        for i, block in enumerate(self.blocks):
            x = block(x, m)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite activation after block {i}")
        return self.final_ln(x)

    def extract(self, hidden: Tensor, layout: SequenceLayout) -> BackboneOutputs:
        """Slice the refined states of both banks and all frames, and form
        next-token answer logits (the row before each answer position)."""
        ms, me = layout.metric_span
        ss, se = layout.struct_span
        metric = hidden[ms:me, :] if layout.n_metric else None
        struct = hidden[ss:se, :] if layout.n_struct else None
        patches = [
            hidden[slice(*layout.frame_span(i)), :] for i in range(layout.n_frames)
        ]
        as_, ae = layout.answer_span
        if layout.len_answer:
            logits = matmul(hidden[as_ - 1 : ae - 1, :], self.unembed)
        else:
            logits = Tensor(np.zeros((0, self.cfg.vocab)), dtype=self.dtype)
        return BackboneOutputs(
            metric_states=metric,
            struct_states=struct,
            patch_states=patches,
            answer_logits=logits,
            layout=layout,
        )

    def parameters(self) -> list[Parameter]:
        params = [self.tok_embed, self.pos_embed]
        for b in self.blocks:
            params.extend(b.parameters())
        params.extend(self.final_ln.parameters())
        params.append(self.unembed)
        return params
