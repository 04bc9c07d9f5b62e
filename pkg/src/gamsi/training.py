"""Unified objective, optimizer, two-stage trainer, and evaluation.

The objective is the answer-token cross-entropy plus the summed per-pathway
alignment terms; the total is always the plain sum of the two, and every
logged row re-states both so the identity is checkable after the fact.
Training is bit-deterministic for a fixed (config, seed): data order,
gradient accumulation order, and optimizer math are all fixed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .evg import align_loss, ground_frames, infonce_loss, mse_loss
from .model import GamsiModel
from .synth import ANSWER_CANDIDATES, PAD, TrainSample
from .tensor import Parameter, Tensor, cross_entropy_logits, no_grad

CSV_HEADER = [
    "step", "stage", "L_LM", "L_MSE_m", "L_CL_m", "L_MSE_s", "L_CL_s",
    "L_Align", "L_total", "ans_acc",
]


def lm_loss(answer_logits: Tensor, answer_tokens) -> Tensor:
    """Mean cross-entropy of the answer tokens under next-token logits."""
    tokens = list(answer_tokens)
    if not tokens:
        raise ContractError("training needs at least one answer token")
    if answer_logits.shape[0] != len(tokens):
        raise ContractError(
            f"{answer_logits.shape[0]} logit rows vs {len(tokens)} answer tokens"
        )
    total = None
    for t, tok in enumerate(tokens):
        ce = cross_entropy_logits(answer_logits[t, :], int(tok))
        total = ce if total is None else total + ce
    return total * (1.0 / len(tokens))


def total_loss(lm: Tensor, align: Tensor) -> Tensor:
    """The whole objective is literally the sum of its two halves."""
    if not (np.isfinite(lm.data) and np.isfinite(align.data)):
        raise NumericError(
            f"non-finite loss components: lm={float(lm.data)}, align={float(align.data)}"
        )
    return lm + align


class AdamW:
    """Decoupled weight decay first, then bias-corrected moment update."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


@dataclass(frozen=True)
class TrainConfig:
    """Per-stage optimization settings."""

    stage: int
    epochs: int = 1
    batch_size: int = 16
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    lam: float = 0.01
    seed: int = 0
    joint_negative_pool: bool = False

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class LossReport:
    """One optimization step's components, as plain floats."""

    step: int
    stage: int
    lm: float
    mse_m: float
    cl_m: float
    mse_s: float
    cl_s: float
    align: float
    total: float
    ans_acc: float

    def row(self) -> list:
        return [
            self.step, self.stage,
            f"{self.lm:.10g}", f"{self.mse_m:.10g}", f"{self.cl_m:.10g}",
            f"{self.mse_s:.10g}", f"{self.cl_s:.10g}", f"{self.align:.10g}",
            f"{self.total:.10g}", f"{self.ans_acc:.10g}",
        ]


def batch_objective(
    model: GamsiModel,
    batch: list[TrainSample],
    lam: float,
    joint_negative_pool: bool = False,
) -> tuple[Tensor, dict]:
    """Forward every sample, pool alignment terms over the whole batch.

    The contrastive pool holds all frames of all batch samples, kept per
    pathway unless `joint_negative_pool` merges the two target sets."""
    lm_sum = None
    hits = 0
    total_tokens = 0
    preds: dict[str, list] = {"metric": [], "structural": []}
    targets: dict[str, list] = {"metric": [], "structural": []}
    for sample in batch:
        qa = sample.qa
        out = model.forward(qa.scene.frames, qa.question, qa.answer)
        piece = lm_loss(out.answer_logits, qa.answer)
        lm_sum = piece if lm_sum is None else lm_sum + piece
        guesses = np.argmax(out.answer_logits.data, axis=1)
        hits += int(np.sum(guesses == np.asarray(qa.answer)))
        total_tokens += len(qa.answer)
        for pathway, states in (
            ("metric", out.metric_states),
            ("structural", out.struct_states),
        ):
            head = model.heads[pathway]
            if head is None or states is None:
                continue
            expert = sample.experts.get(pathway)
            if expert is None:
                raise ConfigError(f"{pathway} pathway enabled but sample has no targets")
            preds[pathway].extend(ground_frames(head, out.patch_states, states))
            targets[pathway].extend(expert.frames)
    lm = lm_sum * (1.0 / len(batch))

    components = {"lm": float(lm.data), "ans_acc": hits / max(total_tokens, 1)}
    align_total = None
    for pathway, short in (("metric", "m"), ("structural", "s")):
        if not preds[pathway]:
            components[f"mse_{short}"] = 0.0
            components[f"cl_{short}"] = 0.0
            continue
        head = model.heads[pathway]
        extra = ()
        if joint_negative_pool:
            other = "structural" if pathway == "metric" else "metric"
            extra = tuple(targets[other])
        mse = mse_loss(preds[pathway], targets[pathway])
        cl = infonce_loss(preds[pathway], targets[pathway], head.tau(), extra_negatives=extra)
        term = align_loss(mse, cl, lam)
        align_total = term if align_total is None else align_total + term
        components[f"mse_{short}"] = float(mse.data)
        components[f"cl_{short}"] = float(cl.data)
    if align_total is None:
        align_total = Tensor(np.array(0.0), dtype=model.dtype)
    components["align"] = float(align_total.data)
    loss = total_loss(lm, align_total)
    components["total"] = float(loss.data)
    return loss, components


def train_stage(
    model: GamsiModel,
    config: TrainConfig,
    data: list[TrainSample],
    csv_path=None,
    optimizer: AdamW | None = None,
    start_step: int = 0,
) -> tuple[list[LossReport], AdamW]:
    """Run one curriculum stage; both stages share this exact loop.

    Returns the per-step reports and the optimizer (reusable by the next
    stage). Appends CSV rows when `csv_path` is given."""
    if not data:
        raise ContractError("train_stage needs a nonempty dataset")
    opt = optimizer or AdamW(
        model.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    opt.lr = config.learning_rate
    opt.weight_decay = config.weight_decay
    rng = np.random.default_rng(config.seed)
    reports: list[LossReport] = []
    writer = None
    handle = None
    if csv_path is not None:
        handle = open(csv_path, "a", newline="")
        writer = csv.writer(handle)
        if handle.tell() == 0:
            writer.writerow(CSV_HEADER)
    step = start_step
    try:
        for _epoch in range(config.epochs):
            order = rng.permutation(len(data))
            for lo in range(0, len(data), config.batch_size):
                batch = [data[i] for i in order[lo : lo + config.batch_size]]
                opt.zero_grad()
                loss, parts = batch_objective(
                    model, batch, config.lam, config.joint_negative_pool
                )
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"non-finite loss at step {step}: "
                        + ", ".join(f"{k}={v}" for k, v in parts.items())
                    )
                loss.backward()
                opt.step()
                step += 1
                report = LossReport(
                    step=step, stage=config.stage,
                    lm=parts["lm"], mse_m=parts["mse_m"], cl_m=parts["cl_m"],
                    mse_s=parts["mse_s"], cl_s=parts["cl_s"],
                    align=parts["align"], total=parts["total"],
                    ans_acc=parts["ans_acc"],
                )
                reports.append(report)
                if writer is not None:
                    writer.writerow(report.row())
    finally:
        if handle is not None:
            handle.close()
    return reports, opt


def dataset_alignment(model: GamsiModel, data: list[TrainSample], lam: float) -> float:
    """Mean alignment loss over a held-out set, pooling per sample."""
    from .evg import pathway_alignment

    if not data:
        raise ContractError("need at least one held-out sample")
    total = 0.0
    with no_grad():
        for sample in data:
            qa = sample.qa
            out = model.forward(qa.scene.frames, qa.question, qa.answer)
            align, _ = pathway_alignment(model.heads, out, sample.experts, lam)
            total += float(align.data)
    return total / len(data)


def predict_answer(model: GamsiModel, qa, max_len: int | None = None) -> list[int]:
    """Greedy decode restricted to the task's answer candidates.

    Each step appends a placeholder token and reads the next-token logits at
    its position; causality makes the placeholder's value irrelevant."""
    candidates = ANSWER_CANDIDATES[qa.task_type]
    length = len(qa.answer) if max_len is None else max_len
    decoded: list[int] = []
    with no_grad():
        for _ in range(length):
            out = model.forward(qa.scene.frames, qa.question, decoded + [PAD])
            row = out.answer_logits.data[-1]
            decoded.append(int(max(candidates, key=lambda tok: row[tok])))
    return decoded


def evaluate_qa(model: GamsiModel, samples: list[TrainSample] | list) -> dict:
    """Per-task and macro answer accuracy under constrained greedy decoding."""
    per_task: dict[str, list[int]] = {}
    for sample in samples:
        qa = sample.qa if isinstance(sample, TrainSample) else sample
        got = predict_answer(model, qa)
        per_task.setdefault(qa.task_type, []).append(int(got == qa.answer))
    accuracy = {task: float(np.mean(v)) for task, v in sorted(per_task.items())}
    macro = float(np.mean(list(accuracy.values()))) if accuracy else 0.0
    return {"per_task": accuracy, "macro": macro, "count": sum(len(v) for v in per_task.values())}


def contamination_metric(model: GamsiModel, probes: list, seed: int = 0, scale: float = 1.0) -> float:
    """How much the structural query states move when the metric bank is
    perturbed: mean over probes of the relative infinity-norm change.
    Exactly zero when the decoupling mask does its job."""
    if model.bank.metric is None or model.bank.struct is None:
        raise ContractError("contamination needs both query banks enabled")
    rng = np.random.default_rng(seed)
    original = model.bank.metric.data.copy()
    ratios = []
    with no_grad():
        try:
            for probe in probes:
                qa = probe.qa if isinstance(probe, TrainSample) else probe
                base = model.forward(qa.scene.frames, qa.question, qa.answer)
                base_states = base.struct_states.data.copy()
                model.bank.metric.data = original + rng.standard_normal(
                    original.shape
                ).astype(original.dtype) * scale
                bumped = model.forward(qa.scene.frames, qa.question, qa.answer)
                model.bank.metric.data = original
                denom = np.abs(base_states).max()
                delta = np.abs(bumped.struct_states.data - base_states).max()
                ratios.append(float(delta / denom) if denom > 0 else float(delta))
        finally:
            model.bank.metric.data = original
    return float(np.mean(ratios))
