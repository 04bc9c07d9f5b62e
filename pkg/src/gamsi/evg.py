"""Expert-guided grounding heads and alignment losses.

Each pathway owns one head. A head fuses the refined patch states of a frame
with the refined query states, resamples the fused tokens down to a small set
of learnable visual latents via one cross-attention block, and projects the
result into the feature space of an external expert. Training pulls those
projections toward per-frame expert targets with a regression term plus a
temperature-scaled contrastive term.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, DegenerateRowError, ShapeError
from .tensor import (
    Parameter,
    Tensor,
    concat,
    cross_entropy_logits,
    gelu,
    masked_softmax,
    matmul,
)

PATHWAYS = ("metric", "structural")
DEFAULT_LAMBDA = 0.01
TAU_INIT = 0.07


@dataclass(frozen=True)
class HeadConfig:
    """Geometry of one grounding head."""

    c: int
    d_e: int
    k_v: int = 4
    heads: int = 1

    def __post_init__(self):
        if self.c % self.heads != 0:
            raise ConfigError(f"head width {self.c} not divisible by {self.heads} heads")
        for name in ("c", "d_e", "k_v", "heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class ExpertFeatureSet:
    """Per-frame supervision targets for one pathway, each (K_v, D_e).

    `shape` only matters for empty sets (it keeps the declared geometry
    through file round-trips); populated sets must agree with it."""

    pathway: str
    frames: list[np.ndarray]
    shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.pathway not in PATHWAYS:
            raise ConfigError(f"unknown pathway {self.pathway!r}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) > 1:
            raise ShapeError(f"expert frames disagree on shape: {sorted(shapes)}")
        for i, f in enumerate(self.frames):
            if f.ndim != 2:
                raise ShapeError(f"expert frame {i} must be 2-D, got {f.shape}")
            if not np.isfinite(f).all():
                raise ContractError(f"expert frame {i} contains non-finite values")
        if self.shape is None:
            self.shape = self.frames[0].shape if self.frames else (0, 0)
        elif self.frames and self.frames[0].shape != tuple(self.shape):
            raise ShapeError(
                f"declared shape {self.shape} vs frame shape {self.frames[0].shape}"
            )

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    @property
    def k_v(self) -> int:
        return self.shape[0]

    @property
    def d_e(self) -> int:
        return self.shape[1]


class GroundingHead:
    """One pathway's projection from fused token states to expert space.

    Pipeline per frame: token-wise fuse projection over the concatenation of
    patch states and query states; cross-attention where the learnable latents
    attend over the fused tokens with themselves appended; residual over the
    latents; a two-layer MLP with residual; output projection to D_e.
    """

    def __init__(self, prefix: str, cfg: HeadConfig, rng: np.random.Generator, dtype):
        from .backbone import INIT_STD, _fan_in_gauss, _qkv_gauss

        c = cfg.c
        g = lambda shape: rng.standard_normal(shape) * INIT_STD
        lin = lambda shape: _fan_in_gauss(rng, shape)
        self.cfg = cfg
        self.fuse_w = Parameter(f"{prefix}.fuse.w", lin((c, c)), dtype=dtype)
        self.fuse_b = Parameter(f"{prefix}.fuse.b", np.zeros(c), dtype=dtype)
        self.qv = Parameter(f"{prefix}.qv", g((cfg.k_v, c)), dtype=dtype)
        self.wq = Parameter(f"{prefix}.attn.wq", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wk = Parameter(f"{prefix}.attn.wk", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wv = Parameter(f"{prefix}.attn.wv", _qkv_gauss(rng, (c, c)), dtype=dtype)
        self.wo = Parameter(f"{prefix}.attn.wo", lin((c, c)), dtype=dtype)
        self.bq = Parameter(f"{prefix}.attn.bq", np.zeros(c), dtype=dtype)
        self.bk = Parameter(f"{prefix}.attn.bk", np.zeros(c), dtype=dtype)
        self.bv = Parameter(f"{prefix}.attn.bv", np.zeros(c), dtype=dtype)
        self.bo = Parameter(f"{prefix}.attn.bo", np.zeros(c), dtype=dtype)
        self.mlp_w1 = Parameter(f"{prefix}.mlp.w1", lin((c, 4 * c)), dtype=dtype)
        self.mlp_b1 = Parameter(f"{prefix}.mlp.b1", np.zeros(4 * c), dtype=dtype)
        self.mlp_w2 = Parameter(f"{prefix}.mlp.w2", lin((4 * c, c)), dtype=dtype)
        self.mlp_b2 = Parameter(f"{prefix}.mlp.b2", np.zeros(c), dtype=dtype)
        self.out_w = Parameter(f"{prefix}.out.w", lin((c, cfg.d_e)), dtype=dtype)
        self.out_b = Parameter(f"{prefix}.out.b", np.zeros(cfg.d_e), dtype=dtype)
        self.log_tau = Parameter(f"{prefix}.log_tau", np.array(math.log(TAU_INIT)), dtype=dtype)

    def tau(self) -> Tensor:
        """Contrastive temperature; positive by construction."""
        return self.log_tau.exp()

    def parameters(self) -> list[Parameter]:
        return [
            self.fuse_w, self.fuse_b, self.qv,
            self.wq, self.wk, self.wv, self.wo,
            self.bq, self.bk, self.bv, self.bo,
            self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2,
            self.out_w, self.out_b, self.log_tau,
        ]


def ground(head: GroundingHead, patch_states: Tensor, query_states: Tensor) -> Tensor:
    """Project one frame's fused context into expert space, (K_v, D_e)."""
    cfg = head.cfg
    if patch_states.shape[1] != cfg.c or query_states.shape[1] != cfg.c:
        raise ShapeError(
            f"token width mismatch: patches {patch_states.shape}, "
            f"queries {query_states.shape}, head width {cfg.c}"
        )
    fused = matmul(concat([patch_states, query_states], axis=0), head.fuse_w) + head.fuse_b
    kv = concat([fused, head.qv], axis=0)
    q = matmul(head.qv, head.wq) + head.bq
    k = matmul(kv, head.wk) + head.bk
    v = matmul(kv, head.wv) + head.bv
    hd = cfg.c // cfg.heads
    scale = 1.0 / math.sqrt(hd)
    no_mask = np.zeros((cfg.k_v, kv.shape[0]), dtype=np.float64)
    ctx = []
    for h in range(cfg.heads):
        cols = slice(h * hd, (h + 1) * hd)
        scores = matmul(q[:, cols] * scale, k[:, cols].T)
        ctx.append(matmul(masked_softmax(scores, no_mask), v[:, cols]))
    attn_out = matmul(concat(ctx, axis=1), head.wo) + head.bo
    res = head.qv + attn_out
    hidden = matmul(gelu(matmul(res, head.mlp_w1) + head.mlp_b1), head.mlp_w2) + head.mlp_b2
    out = res + hidden
    return matmul(out, head.out_w) + head.out_b


def ground_frames(head: GroundingHead, patch_states: list[Tensor], query_states: Tensor) -> list[Tensor]:
    return [ground(head, p, query_states) for p in patch_states]


def mse_loss(f_vq: list[Tensor], f_gt: list[np.ndarray]) -> Tensor:
    """Mean over frames of the squared L2 norm of the flattened difference.

    The norm is NOT divided by the element count; only the frame average is
    taken."""
    if not f_vq:
        raise ContractError("mse_loss needs at least one frame")
    if len(f_vq) != len(f_gt):
        raise ShapeError(f"{len(f_vq)} predictions vs {len(f_gt)} targets")
    total = None
    for pred, target in zip(f_vq, f_gt):
        if pred.shape != target.shape:
            raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
        diff = pred - Tensor(target, dtype=pred.dtype)
        sq = (diff * diff).sum()
        total = sq if total is None else total + sq
    return total * (1.0 / len(f_vq))


def _normalized_rows(x: Tensor) -> Tensor:
    sq = (x * x).sum(axis=1, keepdims=True)
    norms = sq ** 0.5
    if np.any(norms.data == 0.0):
        raise DegenerateRowError("zero-norm vector has no cosine direction")
    return x / norms


def infonce_loss(
    f_vq: list[Tensor],
    f_gt: list[np.ndarray],
    tau,
    extra_negatives: Sequence[np.ndarray] = (),
) -> Tensor:
    """Contrastive loss over cosine similarities of flattened features.

    Prediction i's positive is target i; every target is a candidate, plus
    any `extra_negatives` appended to the pool. `tau` may be a live
    temperature tensor or a plain float."""
    if not f_vq or len(f_vq) != len(f_gt):
        raise ContractError(
            f"need matching nonempty pools, got {len(f_vq)} vs {len(f_gt)}"
        )
    n = len(f_vq)
    preds = concat([p.reshape(1, p.size) for p in f_vq], axis=0)
    targets = np.stack(
        [np.asarray(t, dtype=preds.dtype).ravel() for t in (*f_gt, *extra_negatives)]
    )
    t_norms = np.linalg.norm(targets, axis=1, keepdims=True)
    if np.any(t_norms == 0.0):
        raise DegenerateRowError("zero-norm target has no cosine direction")
    sims = matmul(_normalized_rows(preds), Tensor(targets / t_norms, dtype=preds.dtype).T)
    if not isinstance(tau, Tensor):
        if tau <= 0:
            raise ContractError(f"temperature must be positive, got {tau}")
        tau = Tensor(np.array(float(tau)), dtype=preds.dtype)
    logits = sims / tau
    total = None
    for i in range(n):
        ce = cross_entropy_logits(logits[i, :], i)
        total = ce if total is None else total + ce
    return total * (1.0 / n)


def align_loss(mse, cl, lam: float):
    """Regression term plus weighted contrastive term for one pathway."""
    if lam < 0:
        raise ConfigError(f"contrastive weight must be >= 0, got {lam}")
    return mse + cl * lam


@dataclass
class AlignmentReport:
    """Per-pathway loss components, as plain floats for logging."""

    mse: dict[str, float] = field(default_factory=dict)
    cl: dict[str, float] = field(default_factory=dict)
    total: float = 0.0


def pathway_alignment(
    heads: dict[str, GroundingHead | None],
    outputs,
    experts: dict[str, ExpertFeatureSet | None],
    lam: float = DEFAULT_LAMBDA,
) -> tuple[Tensor, AlignmentReport]:
    """Sum of per-pathway alignment losses for one sample.

    The contrastive pool is this sample's own frames, kept separate per
    pathway. Disabled pathways (no head or no refined states) contribute
    nothing; an enabled pathway without expert targets is an error."""
    report = AlignmentReport()
    total = None
    for pathway, states in (
        ("metric", outputs.metric_states),
        ("structural", outputs.struct_states),
    ):
        head = heads.get(pathway)
        if head is None or states is None:
            continue
        expert = experts.get(pathway)
        if expert is None:
            raise ConfigError(f"{pathway} pathway enabled but no expert targets given")
        if expert.frame_count != len(outputs.patch_states):
            raise ShapeError(
                f"{pathway} expert has {expert.frame_count} frames, "
                f"sample has {len(outputs.patch_states)}"
            )
        preds = ground_frames(head, outputs.patch_states, states)
        mse = mse_loss(preds, expert.frames)
        cl = infonce_loss(preds, expert.frames, head.tau())
        term = align_loss(mse, cl, lam)
        report.mse[pathway] = float(mse.data)
        report.cl[pathway] = float(cl.data)
        total = term if total is None else total + term
    if total is None:
        total = Tensor(np.array(0.0))
    report.total = float(total.data)
    return total, report
