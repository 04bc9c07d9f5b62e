"""Token sequence layout and the task-decoupled attention mask.

One flattened decoder sequence holds, in order: the visual patch tokens of
every frame, a bank of metric-depth query tokens, a bank of 3d-structure
query tokens, the question tokens, and (during training) the answer tokens.

The attention mask is the standard causal triangle with one extra block:
rows belonging to the structural queries may never attend to columns
belonging to the metric queries. Causality already hides the structural
bank from the metric bank (it sits later in the sequence), so with the
extra block the two banks are mutually invisible while both still see the
full visual prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import NEG_INF


@dataclass(frozen=True)
class SequenceLayout:
    """Index bookkeeping for one flattened token sequence.

    Spans are stored half-open ``[start, stop)``; the ``*_range`` accessors
    expose the closed ``[S, E]`` convention used by the external JSON report.
    A span may be empty (ablation variants drop a query bank entirely).
    """

    n_frames: int
    patches_per_frame: int
    n_metric: int
    n_struct: int
    len_question: int
    len_answer: int

    @property
    def visual_len(self) -> int:
        return self.n_frames * self.patches_per_frame

    @property
    def metric_span(self) -> tuple[int, int]:
        s = self.visual_len
        return (s, s + self.n_metric)

    @property
    def struct_span(self) -> tuple[int, int]:
        s = self.visual_len + self.n_metric
        return (s, s + self.n_struct)

    @property
    def question_span(self) -> tuple[int, int]:
        s = self.visual_len + self.n_metric + self.n_struct
        return (s, s + self.len_question)

    @property
    def answer_span(self) -> tuple[int, int]:
        s = self.question_span[1]
        return (s, s + self.len_answer)

    @property
    def total(self) -> int:
        return self.answer_span[1]

    def frame_span(self, i: int) -> tuple[int, int]:
        if not 0 <= i < self.n_frames:
            raise ShapeError(f"frame index {i} out of range [0, {self.n_frames})")
        s = i * self.patches_per_frame
        return (s, s + self.patches_per_frame)

    def metric_range(self) -> tuple[int, int]:
        """Closed-interval [S_m, E_m]; meaningless if the bank is empty."""
        s, e = self.metric_span
        return (s, e - 1)

    def struct_range(self) -> tuple[int, int]:
        s, e = self.struct_span
        return (s, e - 1)

    def to_json_dict(self) -> dict:
        qs, qe = self.question_span
        as_, ae = self.answer_span
        d = {
            "total": self.total,
            "n_frames": self.n_frames,
            "patches_per_frame": self.patches_per_frame,
            "visual": [0, self.visual_len - 1],
            "question": [qs, qe - 1] if self.len_question else None,
            "answer": [as_, ae - 1] if self.len_answer else None,
        }
        d["metric"] = list(self.metric_range()) if self.n_metric else None
        d["struct"] = list(self.struct_range()) if self.n_struct else None
        return d


def make_layout(
    n_frames: int,
    patches_per_frame: int,
    n_metric: int,
    n_struct: int,
    len_question: int,
    len_answer: int,
) -> SequenceLayout:
    """Generalized constructor: query banks may be empty (ablations)."""
    if n_frames < 1 or patches_per_frame < 1:
        raise ConfigError(
            f"need at least one frame and one patch, got N={n_frames}, P={patches_per_frame}"
        )
    if n_metric < 0 or n_struct < 0:
        raise ConfigError("query bank sizes cannot be negative")
    if len_question < 1:
        raise ConfigError(f"question must be nonempty, got L_q={len_question}")
    if len_answer < 0:
        raise ConfigError(f"answer length cannot be negative, got L_a={len_answer}")
    return SequenceLayout(
        n_frames=n_frames,
        patches_per_frame=patches_per_frame,
        n_metric=n_metric,
        n_struct=n_struct,
        len_question=len_question,
        len_answer=len_answer,
    )


def build_layout(
    n_frames: int,
    patches_per_frame: int,
    k: int,
    len_question: int,
    len_answer: int,
) -> SequenceLayout:
    """Standard layout with `k` queries in each bank.

    Total length is N*P + 2K + L_q + L_a. The question is placed after the
    queries; the ordering of text vs. queries is a convention, not a
    requirement of the mechanism.
    """
    if k < 1:
        raise ConfigError(f"need at least one query per bank, got K={k}")
    return make_layout(n_frames, patches_per_frame, k, k, len_question, len_answer)


class AttentionMask:
    """Square additive mask: 0.0 where attention is allowed, NEG_INF where
    blocked. Immutable after construction; shareable across threads."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ShapeError(f"mask must be square, got shape {values.shape}")
        values.setflags(write=False)
        self.values = values

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def allowed(self) -> np.ndarray:
        """Boolean matrix of permitted (row, col) pairs."""
        return self.values > NEG_INF / 2

    def as_dtype(self, dtype) -> np.ndarray:
        return self.values.astype(dtype)

    def blocked_pairs_count(self) -> int:
        return int((~self.allowed()).sum())


def build_mask(layout: SequenceLayout, decouple: bool = True) -> AttentionMask:
    """Causal mask plus the structural-row / metric-column block.

    `decouple=False` drops the block and leaves plain causal attention; it
    exists only so ablation runs can measure what the block prevents."""
    t = layout.total
    vals = np.full((t, t), NEG_INF, dtype=np.float64)
    vals[np.tril_indices(t)] = 0.0
    if decouple:
        ss, se = layout.struct_span
        ms, me = layout.metric_span
        vals[ss:se, ms:me] = NEG_INF
    return AttentionMask(vals)


@dataclass
class MaskReport:
    ok: bool
    failures: list[tuple[int, int, str]]

    def summary(self, limit: int = 5) -> str:
        if self.ok:
            return "mask: PASS (causality, decoupling block, self-attention)"
        lines = [f"mask: FAIL ({len(self.failures)} violations)"]
        for i, j, why in self.failures[:limit]:
            lines.append(f"  ({i},{j}): {why}")
        return "\n".join(lines)


def verify_mask(mask: AttentionMask, layout: SequenceLayout) -> MaskReport:
    """Exhaustively check the three mask invariants.

    Failures are collected and reported, never raised; both the tests and
    the diagnostics CLI route through here.
    """
    failures: list[tuple[int, int, str]] = []
    if mask.size != layout.total:
        return MaskReport(False, [(-1, -1, f"size {mask.size} != layout total {layout.total}")])
    allowed = mask.allowed()
    t = mask.size

    acausal = np.argwhere(np.triu(allowed, k=1))
    for i, j in acausal:
        failures.append((int(i), int(j), "allowed entry above the diagonal (j > i)"))

    ss, se = layout.struct_span
    ms, me = layout.metric_span
    leaked = np.argwhere(allowed[ss:se, ms:me])
    for di, dj in leaked:
        failures.append(
            (int(di) + ss, int(dj) + ms, "structural-query row attends a metric-query column")
        )

    for i in range(t):
        if not allowed[i, i]:
            failures.append((i, i, "self-attention blocked"))
        if not allowed[i].any():
            failures.append((i, -1, "fully masked row"))

    return MaskReport(ok=not failures, failures=failures)


def render_mask_grid(mask: AttentionMask, layout: SequenceLayout) -> str:
    """Text rendering: '.' = allowed, 'X' = blocked, with span annotations."""

    def tag(i: int) -> str:
        if i < layout.visual_len:
            return "v"
        ms, me = layout.metric_span
        if ms <= i < me:
            return "m"
        ss, se = layout.struct_span
        if ss <= i < se:
            return "s"
        qs, qe = layout.question_span
        if qs <= i < qe:
            return "q"
        return "a"

    allowed = mask.allowed()
    t = mask.size
    header = "    " + "".join(tag(j) for j in range(t))
    lines = [header]
    for i in range(t):
        row = "".join("." if allowed[i, j] else "X" for j in range(t))
        lines.append(f"{i:>3}{tag(i)}{row}")
    lines.append("")
    lines.append("rows/cols: v=visual m=metric-query s=structural-query q=question a=answer")
    for name, rng in (
        ("visual", (0, layout.visual_len - 1)),
        ("metric", layout.metric_range() if layout.n_metric else None),
        ("struct", layout.struct_range() if layout.n_struct else None),
        ("question", (layout.question_span[0], layout.question_span[1] - 1)),
    ):
        if rng is not None:
            lines.append(f"{name}: [{rng[0]}, {rng[1]}]")
    return "\n".join(lines)


def mask_to_json(mask: AttentionMask, layout: SequenceLayout) -> dict:
    return {
        "T": mask.size,
        "ranges": layout.to_json_dict(),
        "blocked_pairs_count": mask.blocked_pairs_count(),
    }
