"""Full dual-pathway model: encoder, query banks, transformer, heads.

Construction draws every weight from one seeded generator in a fixed order,
so a (config, seed) pair pins the initial checkpoint bytes. The three switches
`use_metric`, `use_struct`, `use_mask` carve out the standard ablation
variants; switched-off pathways contribute no parameters at all, which makes
variant differences visible as a plain parameter-name diff.
"""

from __future__ import annotations

import numpy as np

from .backbone import Backbone, BackboneConfig, BackboneOutputs, QueryBank, VisionEncoder
from .errors import ConfigError
from .evg import GroundingHead, HeadConfig
from .masking import AttentionMask, SequenceLayout, build_mask, make_layout
from .tensor import Parameter

ABLATIONS = {
    "baseline": dict(use_metric=False, use_struct=False, use_mask=True),
    "struct-only": dict(use_metric=False, use_struct=True, use_mask=True),
    "no-mask": dict(use_metric=True, use_struct=True, use_mask=False),
    "full": dict(use_metric=True, use_struct=True, use_mask=True),
}


class GamsiModel:
    def __init__(
        self,
        cfg: BackboneConfig,
        d_e: int = 16,
        k_v: int = 4,
        grounding_heads: int = 1,
        use_metric: bool = True,
        use_struct: bool = True,
        use_mask: bool = True,
        seed: int = 0,
        dtype=np.float32,
    ):
        self.cfg = cfg
        self.head_cfg = HeadConfig(c=cfg.c, d_e=d_e, k_v=k_v, heads=grounding_heads)
        self.use_metric = use_metric
        self.use_struct = use_struct
        self.use_mask = use_mask
        self.seed = seed
        self.dtype = np.dtype(dtype)

        rng = np.random.default_rng(seed)
        self.encoder = VisionEncoder("encoder", cfg, rng, dtype)
        self.backbone = Backbone(cfg, rng, dtype)
        self.bank = QueryBank(
            "queries", cfg.k, cfg.c, rng, dtype,
            with_metric=use_metric, with_struct=use_struct,
        )
        self.heads: dict[str, GroundingHead | None] = {
            "metric": GroundingHead("head.metric", self.head_cfg, rng, dtype)
            if use_metric
            else None,
            "structural": GroundingHead("head.struct", self.head_cfg, rng, dtype)
            if use_struct
            else None,
        }
        self._mask_cache: dict[SequenceLayout, np.ndarray] = {}

    @classmethod
    def variant(cls, name: str, cfg: BackboneConfig, **kwargs) -> "GamsiModel":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown variant {name!r}, have {sorted(ABLATIONS)}")
        return cls(cfg, **ABLATIONS[name], **kwargs)

    def parameters(self) -> list[Parameter]:
        params = self.encoder.parameters() + self.backbone.parameters()
        params.extend(self.bank.parameters())
        for key in ("metric", "structural"):
            head = self.heads[key]
            if head is not None:
                params.extend(head.parameters())
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for p in self.parameters():
            if p.name in out:
                raise ConfigError(f"duplicate parameter name {p.name!r}")
            out[p.name] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def layout_for(self, n_frames: int, len_question: int, len_answer: int) -> SequenceLayout:
        return make_layout(
            n_frames=n_frames,
            patches_per_frame=self.cfg.p,
            n_metric=self.cfg.k if self.use_metric else 0,
            n_struct=self.cfg.k if self.use_struct else 0,
            len_question=len_question,
            len_answer=len_answer,
        )

    def mask_for(self, layout: SequenceLayout) -> np.ndarray:
        cached = self._mask_cache.get(layout)
        if cached is None:
            mask = build_mask(layout, decouple=self.use_mask)
            cached = mask.as_dtype(self.dtype)
            self._mask_cache[layout] = cached
        return cached

    def attention_mask(self, layout: SequenceLayout) -> AttentionMask:
        return build_mask(layout, decouple=self.use_mask)

    def forward(
        self,
        frames: list[np.ndarray],
        question_ids,
        answer_ids=(),
    ) -> BackboneOutputs:
        """Run one sample end to end and slice out all pathway states."""
        scene = self.encoder.encode_frames(frames)
        embeds, layout = self.backbone.assemble(
            scene,
            [self.bank.metric, self.bank.struct],
            list(question_ids),
            list(answer_ids),
        )
        hidden = self.backbone.forward(embeds, self.mask_for(layout))
        return self.backbone.extract(hidden, layout)

    def describe(self) -> dict:
        names = sorted(self.named_parameters())
        return {
            "parameters": len(names),
            "scalars": int(sum(p.size for p in self.parameters())),
            "use_metric": self.use_metric,
            "use_struct": self.use_struct,
            "use_mask": self.use_mask,
            "dtype": self.dtype.name,
            "names": names,
        }
