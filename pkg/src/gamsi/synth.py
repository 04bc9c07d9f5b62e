"""Deterministic synthetic scenes, spatial QA, and expert oracles.

A scene is a latent spec (G x G depth grid in meters, a handful of objects on
distinct grid cells, per-frame viewpoint tags) rendered into small RGB-like
frames. Channel 0 carries normalized depth; channel 1 carries object marks,
each object lighting the quadrant of its cell indexed by its class so that
different classes are orthogonal pixel patterns (a pure intensity code would
put every class along one feature direction, and attention cannot select the
dimmer of two keys that differ only in scale); channel 2 carries per-cell
coordinate ramps — the upper half of each cell encodes its column, the lower
half its row — so a cell's grid position is readable from its own pixels and
two retrieved cells can be compared coordinate-wise. The ramps roll with the
viewpoint, so the view of a frame is recoverable as the column code sitting
at any fixed pixel position. Frames of one scene differ only by a horizontal
roll.

Questions are token sequences over a fixed micro-vocabulary; every answer is
a single token computed from the latent spec by a closed-form rule, so tests
can recompute it independently. The two expert oracles are fixed seeded
linear maps: the metric one sees only the (view-adjusted) depth grid, the
structural one sees only the object layout and the viewpoint tag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .evg import ExpertFeatureSet

GRID = 4
FRAME_PX = 16
CELL_PX = FRAME_PX // GRID
N_FRAMES = 2
N_CLASSES = 4
DEPTH_MIN, DEPTH_MAX = 0.5, 5.0
DEPTH_BINS = (2.0, 3.5)  # three bins: [0.5,2), [2,3.5), [3.5,5]
DEPTH_MARGIN = 0.45  # queried cells keep this distance from bin boundaries
DISTANCE_MARGIN = 1.0  # compared objects differ by at least this much depth
VIEWS = ("left", "center", "right")
VIEW_SHIFT_PX = {"left": -CELL_PX, "center": 0, "right": CELL_PX}

# -- micro-vocabulary -------------------------------------------------------

PAD = 0
ASK_DEPTH, ASK_CLOSER, ASK_DIR, ASK_COUNT, ASK_VIEW = 1, 2, 3, 4, 5
AXIS_H, AXIS_V = 6, 7  # direction questions name the axis to compare along
# ids 8..13 reserved (unused) so downstream token ids stay stable
CLS0 = 14  # ..17
BIN0 = 18  # ..20
CLOSER, FARTHER = 21, 22
LEFT, RIGHT, ABOVE, BELOW = 23, 24, 25, 26
CNT0 = 27  # token for count 2; ..29 for 3, 4
VIEW0 = 30  # ..32 in VIEWS order
VOCAB = 33

TOKEN_NAMES = (
    ["pad", "ask-depth", "ask-closer", "ask-dir", "ask-count", "ask-view"]
    + ["axis-h", "axis-v"]
    + [f"reserved{i}" for i in range(8, 14)]
    + [f"class{i}" for i in range(N_CLASSES)]
    + ["bin0", "bin1", "bin2", "closer", "farther", "left", "right", "above", "below"]
    + ["count2", "count3", "count4"]
    + ["view-left", "view-center", "view-right"]
)

TASKS = (
    "absolute-depth-bin",
    "relative-distance",
    "relative-direction",
    "object-count",
    "view-change",
)

ANSWER_CANDIDATES = {
    "absolute-depth-bin": (BIN0, BIN0 + 1, BIN0 + 2),
    "relative-distance": (CLOSER, FARTHER),
    "relative-direction": (LEFT, RIGHT, ABOVE, BELOW),
    "object-count": (CNT0, CNT0 + 1, CNT0 + 2),
    "view-change": (VIEW0, VIEW0 + 1, VIEW0 + 2),
}

QUESTION_LEN = 4
ANSWER_LEN = 1


@dataclass(frozen=True)
class SceneObject:
    cls_id: int
    cell: tuple[int, int]  # (row, col) on the grid, center view
    size: int  # 0 = small blob, 1 = fills the cell


@dataclass
class SynthScene:
    seed: int
    depth: np.ndarray  # (GRID, GRID) float64, meters
    objects: tuple[SceneObject, ...]
    views: tuple[str, ...]  # one tag per frame; frame 0 is center
    frames: list[np.ndarray]  # (FRAME_PX, FRAME_PX, 3) float32 in [0, 1]


@dataclass
class QASample:
    scene: SynthScene
    task_type: str
    question: list[int]
    answer: list[int]


class _Unsatisfiable(Exception):
    """Internal: this scene cannot host the requested question."""


def _norm_depth(depth: np.ndarray) -> np.ndarray:
    return (depth - DEPTH_MIN) / (DEPTH_MAX - DEPTH_MIN)


def render_frame(depth: np.ndarray, objects, view: str) -> np.ndarray:
    """Draw the center-view image, then roll horizontally for the view."""
    img = np.zeros((FRAME_PX, FRAME_PX, 3), dtype=np.float64)
    img[:, :, 0] = np.kron(_norm_depth(depth), np.ones((CELL_PX, CELL_PX)))
    half = CELL_PX // 2
    for obj in objects:
        r, c = obj.cell
        rs, cs = r * CELL_PX, c * CELL_PX
        qr, qc = divmod(obj.cls_id, 2)
        level = 1.0 if obj.size else 0.6
        img[
            rs + qr * half : rs + (qr + 1) * half,
            cs + qc * half : cs + (qc + 1) * half,
            1,
        ] = level
    # Channel 2: per-cell coordinate ramps. Upper half of each cell encodes its
    # column, lower half its row, so retrieved cells expose comparable
    # coordinates. After the roll, the column code at any fixed pixel position
    # identifies the view (at physical column 0: left 1/3, center 0, right 1).
    for r in range(GRID):
        for c in range(GRID):
            rs, cs = r * CELL_PX, c * CELL_PX
            img[rs : rs + half, cs : cs + CELL_PX, 2] = c / (GRID - 1)
            img[rs + half : rs + CELL_PX, cs : cs + CELL_PX, 2] = r / (GRID - 1)
    return np.roll(img, VIEW_SHIFT_PX[view], axis=1).astype(np.float32)


def gen_scene(seed: int) -> SynthScene:
    """Deterministic scene: same seed, bit-identical output."""
    rng = np.random.default_rng(seed)
    depth = DEPTH_MIN + rng.random((GRID, GRID)) * (DEPTH_MAX - DEPTH_MIN)
    n_obj = int(rng.integers(2, N_CLASSES + 1))
    classes = rng.choice(N_CLASSES, size=n_obj, replace=False)
    cells = rng.choice(GRID * GRID, size=n_obj, replace=False)
    sizes = rng.integers(0, 2, size=n_obj)
    objects = tuple(
        SceneObject(int(k), (int(cell // GRID), int(cell % GRID)), int(s))
        for k, cell, s in zip(classes, cells, sizes)
    )
    views = ("center",) + tuple(
        VIEWS[int(v)] for v in rng.integers(0, len(VIEWS), size=N_FRAMES - 1)
    )
    frames = [render_frame(depth, objects, v) for v in views]
    return SynthScene(seed=seed, depth=depth, objects=objects, views=views, frames=frames)


# -- answer rules (the generator's oracle) ----------------------------------


def depth_bin(value: float, bins=DEPTH_BINS) -> int:
    b = 0
    for edge in bins:
        if value >= edge:
            b += 1
    return b


def direction_of(a: tuple[int, int], b: tuple[int, int]) -> int | None:
    """Token for where cell `a` sits relative to cell `b`, center view;
    None when they share neither row nor column (ambiguous)."""
    (ra, ca), (rb, cb) = a, b
    if ra == rb and ca != cb:
        return LEFT if ca < cb else RIGHT
    if ca == cb and ra != rb:
        return ABOVE if ra < rb else BELOW
    return None


def gen_qa(scene: SynthScene, task_type: str, rng: np.random.Generator) -> QASample:
    """Build one question with a margin-respecting, rule-derived answer."""
    if task_type not in TASKS:
        raise ConfigError(f"unsupported task_type {task_type!r}")
    q = [PAD] * QUESTION_LEN
    if task_type == "absolute-depth-bin":
        # Reference an object by class; answer is the bin of its cell's depth.
        # The binding token sits at the last question position, adjacent to
        # where the answer is predicted.
        ok = [
            o
            for o in scene.objects
            if all(
                abs(float(scene.depth[o.cell]) - edge) >= DEPTH_MARGIN
                for edge in DEPTH_BINS
            )
        ]
        if not ok:
            raise _Unsatisfiable
        obj = ok[int(rng.integers(len(ok)))]
        q[0] = ASK_DEPTH
        q[3] = CLS0 + obj.cls_id
        ans = BIN0 + depth_bin(float(scene.depth[obj.cell]))
    elif task_type == "relative-distance":
        pairs = [
            (a, b)
            for a in scene.objects
            for b in scene.objects
            if a.cls_id != b.cls_id
            and abs(scene.depth[a.cell] - scene.depth[b.cell]) >= DISTANCE_MARGIN
        ]
        if not pairs:
            raise _Unsatisfiable
        a, b = pairs[int(rng.integers(len(pairs)))]
        q[0], q[1], q[3] = ASK_CLOSER, CLS0 + a.cls_id, CLS0 + b.cls_id
        ans = CLOSER if scene.depth[a.cell] < scene.depth[b.cell] else FARTHER
    elif task_type == "relative-direction":
        # The question names the axis to compare along, so the model never has
        # to infer which coordinate the pair shares.
        pairs_h = [
            (a, b)
            for a in scene.objects
            for b in scene.objects
            if a.cls_id != b.cls_id and a.cell[0] == b.cell[0] and a.cell[1] != b.cell[1]
        ]
        pairs_v = [
            (a, b)
            for a in scene.objects
            for b in scene.objects
            if a.cls_id != b.cls_id and a.cell[1] == b.cell[1] and a.cell[0] != b.cell[0]
        ]
        axis = AXIS_H if int(rng.integers(2)) == 0 else AXIS_V
        pool = pairs_h if axis == AXIS_H else pairs_v
        if not pool:  # keep the draw even if one axis is unavailable
            axis = AXIS_V if axis == AXIS_H else AXIS_H
            pool = pairs_h if axis == AXIS_H else pairs_v
        if not pool:
            raise _Unsatisfiable
        a, b = pool[int(rng.integers(len(pool)))]
        d = direction_of(a.cell, b.cell)
        assert d is not None  # guaranteed by the shared-coordinate filters
        q[:4] = [ASK_DIR, axis, CLS0 + a.cls_id, CLS0 + b.cls_id]
        ans = d
    elif task_type == "object-count":
        q[0] = ASK_COUNT
        ans = CNT0 + len(scene.objects) - 2
    else:  # view-change
        q[0] = ASK_VIEW
        ans = VIEW0 + VIEWS.index(scene.views[1])
    return QASample(scene=scene, task_type=task_type, question=q, answer=[ans])


def _mix(base_seed: int, index: int, attempt: int) -> int:
    # splitmix-style spread so per-sample streams never collide in practice
    x = (base_seed * 0x9E3779B97F4A7C15 + index * 0xBF58476D1CE4E5B9 + attempt + 1) & (
        (1 << 63) - 1
    )
    return x


def gen_sample(base_seed: int, index: int, task_type: str) -> QASample:
    """Deterministic sample: rejection-resample scenes until the task's
    margins are satisfiable. The successful scene seed is recoverable from
    the sample itself (scene.seed), so manifests can replay it."""
    for attempt in range(64):
        scene_seed = _mix(base_seed, index, attempt)
        scene = gen_scene(scene_seed)
        rng = np.random.default_rng((scene_seed ^ 0x5DEECE66D) & ((1 << 63) - 1))
        try:
            return gen_qa(scene, task_type, rng)
        except _Unsatisfiable:
            continue
    raise ContractError(
        f"no satisfiable scene for {task_type} after 64 attempts (seed {base_seed}, index {index})"
    )


# -- expert oracles ---------------------------------------------------------


def _expert_map(expert_seed: int, tag: int, in_dim: int, k_v: int, d_e: int) -> np.ndarray:
    rng = np.random.default_rng([expert_seed, tag])
    return rng.standard_normal((in_dim, k_v * d_e)) / np.sqrt(in_dim)


def view_adjusted_depth(scene: SynthScene, frame_i: int) -> np.ndarray:
    shift_cells = VIEW_SHIFT_PX[scene.views[frame_i]] // CELL_PX
    return np.roll(scene.depth, shift_cells, axis=1)


def synth_metric_expert(
    scene: SynthScene, k_v: int, d_e: int, expert_seed: int = 7
) -> ExpertFeatureSet:
    """Fixed linear projection of the normalized, view-adjusted depth grid.

    Depends on depth values only; relocating or relabeling objects leaves
    it unchanged."""
    w = _expert_map(expert_seed, 0, GRID * GRID, k_v, d_e)
    frames = [
        (_norm_depth(view_adjusted_depth(scene, i)).ravel() @ w)
        .reshape(k_v, d_e)
        .astype(np.float32)
        for i in range(len(scene.views))
    ]
    return ExpertFeatureSet("metric", frames)


def synth_struct_expert(
    scene: SynthScene, k_v: int, d_e: int, expert_seed: int = 7
) -> ExpertFeatureSet:
    """Fixed linear projection of the (class, cell) layout plus the frame's
    viewpoint tag. Depends on layout only; depth perturbations leave it
    unchanged."""
    in_dim = N_CLASSES * GRID * GRID + len(VIEWS)
    w = _expert_map(expert_seed, 1, in_dim, k_v, d_e)
    layout = np.zeros(N_CLASSES * GRID * GRID)
    for obj in scene.objects:
        layout[obj.cls_id * GRID * GRID + obj.cell[0] * GRID + obj.cell[1]] = 1.0
    frames = []
    for view in scene.views:
        vec = np.concatenate([layout, np.eye(len(VIEWS))[VIEWS.index(view)]])
        frames.append((vec @ w).reshape(k_v, d_e).astype(np.float32))
    return ExpertFeatureSet("structural", frames)


# -- dataset assembly --------------------------------------------------------

STAGE1_MIXTURE = {
    "absolute-depth-bin": 0.30,
    "relative-distance": 0.20,
    "relative-direction": 0.20,
    "object-count": 0.20,
    "view-change": 0.10,
}
# Stage 2 over-samples the tasks that learn slowest so each reaches its
# operating point within the same training budget.
STAGE2_MIXTURE = {
    "absolute-depth-bin": 0.20,
    "relative-distance": 0.20,
    "relative-direction": 0.25,
    "object-count": 0.25,
    "view-change": 0.10,
}


def mixture_for_stage(stage: int) -> dict[str, float]:
    if stage == 1:
        return dict(STAGE1_MIXTURE)
    if stage == 2:
        return dict(STAGE2_MIXTURE)
    raise ConfigError(f"stage must be 1 or 2, got {stage}")


def task_schedule(count: int, mixture: dict[str, float]) -> list[str]:
    """Largest-remainder split of `count` samples over the mixture; the
    per-task counts always sum to `count` exactly."""
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    tasks = sorted(mixture)
    weights = np.array([mixture[t] for t in tasks], dtype=np.float64)
    if weights.sum() <= 0 or (weights < 0).any():
        raise ConfigError("mixture weights must be nonnegative and sum > 0")
    exact = weights / weights.sum() * count
    base = np.floor(exact).astype(int)
    rest = count - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    for i in range(rest):
        base[order[i]] += 1
    schedule: list[str] = []
    for task, n in zip(tasks, base):
        schedule.extend([task] * int(n))
    return schedule


@dataclass
class TrainSample:
    """Everything one optimization example needs, in memory."""

    qa: QASample
    experts: dict[str, ExpertFeatureSet]


def build_dataset(
    count: int,
    base_seed: int,
    mixture: dict[str, float],
    k_v: int,
    d_e: int,
    expert_seed: int = 7,
) -> list[TrainSample]:
    out = []
    for index, task in enumerate(task_schedule(count, mixture)):
        qa = gen_sample(base_seed, index, task)
        out.append(
            TrainSample(
                qa=qa,
                experts={
                    "metric": synth_metric_expert(qa.scene, k_v, d_e, expert_seed),
                    "structural": synth_struct_expert(qa.scene, k_v, d_e, expert_seed),
                },
            )
        )
    return out
