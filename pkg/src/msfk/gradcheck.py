"""Finite-difference verification of the analytic fusion gradients.

Each check builds a seeded fixture, reduces the operation to a scalar via
a fixed random weighting, and compares the analytic input gradients with
central differences. The max-fusion fixtures keep the two operands
separated so the piecewise-linear max is smooth around the evaluation
point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import TextEmbeddings, grad_max_fused_logits
from .kernel import (
    Tensor,
    add,
    concat_rows,
    elementwise_max,
    finite_diff_grad,
    grad_affinity,
    grad_concat_fusion,
    grad_elementwise_max,
    grad_sum_fusion,
    matmul,
    transpose,
)

__all__ = ["TOLERANCE", "GradCheckResult", "run_checks", "all_pass"]

TOLERANCE = 1e-3
_SHAPE = (4, 3)


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.max_rel_error <= tolerance


def _rel_error(analytic: Tensor, numeric: Tensor) -> float:
    diff = float(np.abs(analytic.array - numeric.array).max())
    scale = max(float(np.abs(numeric.array).max()), 1e-12)
    return diff / scale


def _scalar(out: Tensor, weighting: Tensor) -> float:
    return float((out.array * weighting.array).sum())


def _separated_pair(rng: np.random.Generator, gap: float = 0.05) -> tuple[Tensor, Tensor]:
    a = rng.standard_normal(_SHAPE)
    b = rng.standard_normal(_SHAPE)
    close = np.abs(a - b) < gap
    b = np.where(close, b + np.sign(b - a + 1e-12) * gap, b)
    return Tensor(a), Tensor(b)


def run_checks(seed: int = 0, inject_fault: bool = False) -> list[GradCheckResult]:
    """Run every gradient check; ``inject_fault`` corrupts one analytic
    gradient as a negative control."""
    rng = np.random.default_rng(seed)
    results: list[GradCheckResult] = []

    # sum fusion: out = a + b
    a = Tensor(rng.standard_normal(_SHAPE))
    b = Tensor(rng.standard_normal(_SHAPE))
    w = Tensor(rng.standard_normal(_SHAPE))
    ga, gb = grad_sum_fusion(w)
    if inject_fault:
        ga = Tensor(ga.array * 1.01)
    num_a = finite_diff_grad(lambda x: _scalar(add(x, b), w), a)
    num_b = finite_diff_grad(lambda x: _scalar(add(a, x), w), b)
    results.append(GradCheckResult(
        "sum_fusion", max(_rel_error(ga, num_a), _rel_error(gb, num_b))
    ))

    # concat fusion: out = rows of a stacked on rows of b
    a = Tensor(rng.standard_normal(_SHAPE))
    b = Tensor(rng.standard_normal(_SHAPE))
    w = Tensor(rng.standard_normal((2 * _SHAPE[0], _SHAPE[1])))
    ga, gb = grad_concat_fusion(w, _SHAPE[0])
    num_a = finite_diff_grad(lambda x: _scalar(concat_rows(x, b), w), a)
    num_b = finite_diff_grad(lambda x: _scalar(concat_rows(a, x), w), b)
    results.append(GradCheckResult(
        "concat_fusion", max(_rel_error(ga, num_a), _rel_error(gb, num_b))
    ))

    # elementwise max with the winner mask routing the subgradient
    a, b = _separated_pair(rng)
    w = Tensor(rng.standard_normal(_SHAPE))
    _, mask = elementwise_max(a, b)
    ga, gb = grad_elementwise_max(mask, w)
    num_a = finite_diff_grad(lambda x: _scalar(elementwise_max(x, b)[0], w), a)
    num_b = finite_diff_grad(lambda x: _scalar(elementwise_max(a, x)[0], w), b)
    results.append(GradCheckResult(
        "elementwise_max", max(_rel_error(ga, num_a), _rel_error(gb, num_b))
    ))

    # affinity: S = f t^T
    f = Tensor(rng.standard_normal(_SHAPE))
    t = Tensor(rng.standard_normal(_SHAPE))
    w = Tensor(rng.standard_normal((_SHAPE[0], _SHAPE[0])))
    gf, gt = grad_affinity(f, t, w)
    num_f = finite_diff_grad(lambda x: _scalar(matmul(x, transpose(t)), w), f)
    num_t = finite_diff_grad(lambda x: _scalar(matmul(f, transpose(x)), w), t)
    results.append(GradCheckResult(
        "affinity", max(_rel_error(gf, num_f), _rel_error(gt, num_t))
    ))

    # max-fused query logits: out = max(q t_rgb^T, q t_ir^T)
    q = Tensor(rng.standard_normal(_SHAPE))
    rgb_arr = rng.standard_normal(_SHAPE)
    ir_arr = rng.standard_normal(_SHAPE)
    for _ in range(100):  # keep the two logit maps separated around the fixture
        gap = np.abs(q.array @ rgb_arr.T - q.array @ ir_arr.T).min()
        if gap >= 0.02:
            break
        ir_arr = ir_arr + 0.05 * rng.standard_normal(_SHAPE)
    t_rgb = TextEmbeddings(Tensor(rgb_arr), ("a", "b", "c", "c"))
    t_ir = TextEmbeddings(Tensor(ir_arr), ("a", "b", "c", "c"))
    w = Tensor(rng.standard_normal((_SHAPE[0], _SHAPE[0])))
    gq, gtr, gti = grad_max_fused_logits(q, t_rgb, t_ir, w)

    def fused_scalar(q_t: Tensor, rgb_t: Tensor, ir_t: Tensor) -> float:
        out, _ = elementwise_max(matmul(q_t, transpose(rgb_t)), matmul(q_t, transpose(ir_t)))
        return _scalar(out, w)

    num_q = finite_diff_grad(lambda x: fused_scalar(x, t_rgb.tokens, t_ir.tokens), q)
    num_tr = finite_diff_grad(lambda x: fused_scalar(q, x, t_ir.tokens), t_rgb.tokens)
    num_ti = finite_diff_grad(lambda x: fused_scalar(q, t_rgb.tokens, x), t_ir.tokens)
    results.append(GradCheckResult(
        "max_fused_logits",
        max(_rel_error(gq, num_q), _rel_error(gtr, num_tr), _rel_error(gti, num_ti)),
    ))

    return results


def all_pass(results: list[GradCheckResult], tolerance: float = TOLERANCE) -> bool:
    return all(r.passed(tolerance) for r in results)
