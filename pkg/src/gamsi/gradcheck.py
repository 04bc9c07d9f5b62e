"""Finite-difference verification of the reverse-mode gradients.

``grad_check`` evaluates a scalar-valued function twice per sampled
coordinate (central differences) and compares against the analytic gradient
produced by ``backward()``. It is the independent oracle for the whole
engine: it never goes through the tape to produce its reference numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Parameter, Tensor, no_grad

# Relative error denominators are floored so that coordinates with a tiny
# true gradient compare at an absolute scale instead of amplifying
# finite-difference noise.
DENOM_FLOOR = 1e-3


@dataclass
class CoordinateResult:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_coordinates: int
    worst: CoordinateResult | None
    per_param_max: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [
            f"grad_check: {status} "
            f"(max rel err {self.max_rel_error:.3e} over {self.n_coordinates} "
            f"coordinates, tol {self.tol:.1e})"
        ]
        if self.worst is not None:
            w = self.worst
            lines.append(
                f"  worst: {w.param}{list(w.index)} "
                f"analytic={w.analytic:.6e} numeric={w.numeric:.6e}"
            )
        return "\n".join(lines)


def _sample_coordinates(
    params: Sequence[Parameter], n: int, rng: np.random.Generator
) -> list[tuple[Parameter, tuple[int, ...]]]:
    """At least one coordinate per parameter, the remainder spread
    proportionally to parameter size."""
    coords: list[tuple[Parameter, tuple[int, ...]]] = []
    total = sum(p.size for p in params)
    for p in params:
        want = max(1, round(n * p.size / total))
        want = min(want, p.size)
        flat = rng.choice(p.size, size=want, replace=False)
        for f in sorted(int(i) for i in flat):
            coords.append((p, np.unravel_index(f, p.shape)))
    return coords


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
    n_samples: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    Tensor. Parameters must be float64: float32 cancellation drowns the
    signal at usable step sizes.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"step h={h} outside [1e-6, 1e-4]")
    for p in params:
        if p.dtype != np.float64:
            raise ContractError(
                f"grad_check requires float64 parameters; {p.name} is {p.dtype.name}"
            )

    rng = np.random.default_rng(seed)
    coords = _sample_coordinates(params, n_samples, rng)

    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise NumericError("non-finite loss at the evaluation point")
    loss.backward()
    analytic = {p.name: p.grad.copy() for p in params}

    results: list[CoordinateResult] = []
    for p, idx in coords:
        orig = p.data[idx]
        with no_grad():
            p.data[idx] = orig + h
            up = f().item()
            p.data[idx] = orig - h
            down = f().item()
        p.data[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(
                f"non-finite loss while probing {p.name}{list(idx)}"
            )
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[p.name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
        results.append(CoordinateResult(p.name, tuple(int(i) for i in idx), a, numeric, rel))

    worst = max(results, key=lambda r: r.rel_error)
    per_param: dict[str, float] = {}
    for r in results:
        per_param[r.param] = max(per_param.get(r.param, 0.0), r.rel_error)
    return GradCheckReport(
        max_rel_error=worst.rel_error,
        tol=tol,
        n_coordinates=len(results),
        worst=worst,
        per_param_max=per_param,
    )
