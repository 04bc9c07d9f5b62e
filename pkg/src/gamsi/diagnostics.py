"""Self-check battery: mask audit, contamination, gradients, identities.

Everything here is pure measurement; nothing mutates the model it is handed
beyond transient perturbations that are always restored.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneConfig
from .evg import ExpertFeatureSet, infonce_loss, mse_loss
from .gradcheck import GradCheckReport, grad_check
from .masking import build_layout, build_mask, verify_mask
from .model import GamsiModel
from .synth import QASample, SynthScene, TrainSample, gen_sample
from .tensor import Tensor
from .training import batch_objective, contamination_metric


@dataclass
class DiagCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class DiagReport:
    checks: list[DiagCheck]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            lines.append(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
        lines.append(f"diagnostics: {'all passed' if self.ok else 'FAILURES PRESENT'}")
        return "\n".join(lines)


MICRO = dict(c=16, heads=2, layers=1, p=4, patch_dim=192, vocab=16, max_t=32, k=2)
MICRO_HEAD = dict(k_v=2, d_e=3)


def micro_model(seed: int = 0, **overrides) -> GamsiModel:
    """Tiny 64-bit model for finite-difference work."""
    cfg = BackboneConfig(**{**MICRO, **{k: v for k, v in overrides.items() if k in MICRO}})
    return GamsiModel(
        cfg,
        d_e=overrides.get("d_e", MICRO_HEAD["d_e"]),
        k_v=overrides.get("k_v", MICRO_HEAD["k_v"]),
        seed=seed,
        dtype=np.float64,
        use_mask=overrides.get("use_mask", True),
        use_metric=overrides.get("use_metric", True),
        use_struct=overrides.get("use_struct", True),
    )


def micro_samples(
    count: int = 2, seed: int = 0, n_frames: int = 2, k_v: int = 2, d_e: int = 3, vocab: int = 16
) -> list[TrainSample]:
    """Random fixed-shape samples sized for the micro model; questions and
    answers are arbitrary in-vocabulary tokens, experts are random targets."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        frames = [rng.random((16, 16, 3)).astype(np.float32) for _ in range(n_frames)]
        scene = SynthScene(
            seed=-1,
            depth=np.full((4, 4), 2.0),
            objects=(),
            views=("center",) * n_frames,
            frames=frames,
        )
        qa = QASample(
            scene=scene,
            task_type="object-count",
            question=[int(t) for t in rng.integers(1, vocab, size=4)],
            answer=[int(rng.integers(1, vocab))],
        )
        experts = {
            "metric": ExpertFeatureSet(
                "metric", [rng.standard_normal((k_v, d_e)).astype(np.float64) for _ in range(n_frames)]
            ),
            "structural": ExpertFeatureSet(
                "structural", [rng.standard_normal((k_v, d_e)).astype(np.float64) for _ in range(n_frames)]
            ),
        }
        out.append(TrainSample(qa=qa, experts=experts))
    return out


def micro_gradcheck(
    seed: int = 0, n_samples: int = 220, tol: float = 1e-4, h: float = 1e-5
) -> GradCheckReport:
    """Finite-difference audit of the complete objective on the micro model."""
    model = micro_model(seed)
    samples = micro_samples(2, seed=seed + 1)
    params = model.parameters()

    def objective():
        loss, _ = batch_objective(model, samples, lam=0.01)
        return loss

    return grad_check(objective, params, h=h, tol=tol, n_samples=n_samples, seed=seed)


def mask_grid_check(
    frames=(1, 2, 3), patches=(2, 4, 8), queries=(1, 2, 8, 40), questions=(1, 4), answers=(0, 2)
) -> DiagCheck:
    bad = []
    n_checked = 0
    for n in frames:
        for p in patches:
            for k in queries:
                for lq in questions:
                    for la in answers:
                        layout = build_layout(n, p, k, lq, la)
                        report = verify_mask(build_mask(layout), layout)
                        n_checked += 1
                        if not report.ok:
                            bad.append((n, p, k, lq, la, len(report.failures)))
    if bad:
        return DiagCheck("mask-grid", False, f"{len(bad)} of {n_checked} layouts violated: {bad[:3]}")
    return DiagCheck("mask-grid", True, f"{n_checked} layouts verified exhaustively")


def contamination_check(model: GamsiModel, probe_count: int = 8, seed: int = 3) -> DiagCheck:
    probes = [gen_sample(seed, i, "object-count") for i in range(probe_count)]
    value = contamination_metric(model, probes, seed=seed)
    if model.use_mask:
        ok = value == 0.0
        return DiagCheck(
            "contamination", ok,
            f"{value!r} over {probe_count} probes (must be exactly 0 with the mask)",
        )
    ok = value > 0.0
    return DiagCheck(
        "contamination", ok,
        f"{value!r} over {probe_count} probes (mask disabled: expected > 0)",
    )


def loss_identity_check(model: GamsiModel, seed: int = 4) -> DiagCheck:
    rng = np.random.default_rng(seed)
    k_v, d_e = model.head_cfg.k_v, model.head_cfg.d_e
    x = [rng.standard_normal((k_v, d_e)) for _ in range(3)]
    mse_zero = float(mse_loss([Tensor(t, dtype=np.float64) for t in x], x).data)
    same = np.ones((k_v, d_e))
    uniform = float(
        infonce_loss([Tensor(same, dtype=np.float64) for _ in range(4)], [same] * 4, 1.0).data
    )
    probes = micro_samples(2, seed=seed, k_v=k_v, d_e=d_e, vocab=model.cfg.vocab)
    loss, parts = batch_objective(model, probes, lam=0.01)
    gap = abs(parts["total"] - (parts["lm"] + parts["align"]))
    ok = mse_zero == 0.0 and abs(uniform - np.log(4)) < 1e-6 and gap < 1e-6
    return DiagCheck(
        "loss-identities", ok,
        f"mse(x,x)={mse_zero}, uniform-pool gap={abs(uniform - np.log(4)):.2e}, "
        f"total-vs-sum gap={gap:.2e}",
    )


def run_diagnostics(model: GamsiModel | None = None, probe_count: int = 8) -> DiagReport:
    checks = [mask_grid_check(frames=(1, 2), patches=(4,), queries=(1, 4), answers=(0, 1))]
    target = model
    if target is None or not (target.use_metric and target.use_struct):
        target = None
    if target is not None:
        checks.append(contamination_check(target, probe_count))
    gc = micro_gradcheck()
    checks.append(
        DiagCheck(
            "grad-check", gc.passed,
            f"max rel err {gc.max_rel_error:.3e} over {gc.n_coordinates} coordinates (tol {gc.tol})",
        )
    )
    ident_model = micro_model(1)
    checks.append(loss_identity_check(ident_model))
    return DiagReport(checks)
