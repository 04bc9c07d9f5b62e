"""Estimator facade with the conventional fit/predict/score surface.

The estimator wraps config construction, the two-stage curriculum, and
constrained decoding behind the familiar sklearn protocol so the model can
sit in pipelines and parameter searches. Samples are TrainSample objects
(question, answer, frames, expert targets all bundled); targets live inside
the samples, so `y` is accepted and ignored everywhere.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import preset as build_preset
from .errors import ContractError
from .synth import TrainSample
from .training import TrainConfig, evaluate_qa, predict_answer, train_stage


def _validate_samples(X, what: str) -> list[TrainSample]:
    if not isinstance(X, (list, tuple)) or not X:
        raise ContractError(f"{what} must be a nonempty list of TrainSample")
    bad = [i for i, s in enumerate(X) if not isinstance(s, TrainSample)]
    if bad:
        raise ContractError(f"{what}[{bad[0]}] is {type(X[bad[0]]).__name__}, expected TrainSample")
    return list(X)


class GamsiEstimator(BaseEstimator):
    """Dual-pathway spatial QA model with an estimator interface.

    Parameters mirror the run config; `None` keeps the preset's value.
    Fitted attributes: `model_` (the trained model), `config_` (the resolved
    run config), `reports_` (per-step loss reports across all stages run).
    """

    def __init__(
        self,
        preset: str = "toy",
        variant: str = "full",
        precision: str = "f32",
        model_seed: int = 0,
        epochs: int | None = None,
        batch_size: int | None = None,
        learning_rate: float | None = None,
        weight_decay: float | None = None,
        lam: float | None = None,
    ):
        self.preset = preset
        self.variant = variant
        self.precision = precision
        self.model_seed = model_seed
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lam = lam

    # -- internals ----------------------------------------------------------

    def _resolved_config(self):
        cfg = build_preset(self.preset)
        cfg.variant = self.variant
        cfg.precision = self.precision
        cfg.model_seed = self.model_seed
        for key in list(cfg.train):
            cfg.train[key] = self._override_stage(cfg.train[key])
        cfg.__post_init__()  # revalidate the mutated fields
        return cfg

    def _override_stage(self, tc: TrainConfig) -> TrainConfig:
        return TrainConfig(
            stage=tc.stage,
            epochs=self.epochs if self.epochs is not None else tc.epochs,
            batch_size=self.batch_size if self.batch_size is not None else tc.batch_size,
            learning_rate=self.learning_rate
            if self.learning_rate is not None
            else tc.learning_rate,
            weight_decay=self.weight_decay
            if self.weight_decay is not None
            else tc.weight_decay,
            lam=self.lam if self.lam is not None else tc.lam,
            seed=tc.seed,
            joint_negative_pool=tc.joint_negative_pool,
        )

    # -- estimator protocol ---------------------------------------------------

    def fit(self, X, y=None):
        """Single-stage fit on one dataset (stage-1 settings)."""
        data = _validate_samples(X, "X")
        self.config_ = self._resolved_config()
        self.model_ = self.config_.build_model()
        reports, opt = train_stage(self.model_, self.config_.stage_config(1), data)
        self.reports_ = reports
        self._optimizer = opt
        return self

    def fit_curriculum(self, stage1_X, stage2_X):
        """Two-stage fit: same objective, different data mixtures."""
        d1 = _validate_samples(stage1_X, "stage1_X")
        d2 = _validate_samples(stage2_X, "stage2_X")
        self.config_ = self._resolved_config()
        self.model_ = self.config_.build_model()
        r1, opt = train_stage(self.model_, self.config_.stage_config(1), d1)
        r2, opt = train_stage(
            self.model_, self.config_.stage_config(2), d2,
            optimizer=opt, start_step=len(r1),
        )
        self.reports_ = r1 + r2
        self._optimizer = opt
        return self

    def predict(self, X) -> np.ndarray:
        """Predicted answer token for each sample (answers are one token)."""
        check_is_fitted(self, "model_")
        data = _validate_samples(X, "X")
        return np.array(
            [predict_answer(self.model_, s.qa)[0] for s in data], dtype=np.int64
        )

    def score(self, X, y=None) -> float:
        """Macro accuracy across task types under constrained decoding."""
        check_is_fitted(self, "model_")
        data = _validate_samples(X, "X")
        return float(evaluate_qa(self.model_, data)["macro"])

    def evaluation_report(self, X) -> dict:
        check_is_fitted(self, "model_")
        return evaluate_qa(self.model_, _validate_samples(X, "X"))
