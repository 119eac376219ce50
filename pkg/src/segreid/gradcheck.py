"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import ContractError, Tensor, backward, get_precision, no_grad


@dataclass
class ParamCheck:
    name: str
    size: int
    max_rel_err: float
    max_abs_grad: float
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def offenders(self) -> list[str]:
        return [p.name for p in self.params if not p.passed]

    def lines(self) -> list[str]:
        out = []
        for p in self.params:
            status = "PASS" if p.passed else "FAIL"
            out.append(
                f"{status}\t{p.name}\tsize={p.size}\tmax_rel_err={p.max_rel_err:.3e}"
                f"\tmax_abs_grad={p.max_abs_grad:.3e}"
            )
        return out


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / denom


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        if value.ndim != 0:
            raise ContractError(f"objective must be scalar, got shape {value.shape}")
        return float(value.data)
    return float(value)


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare tape gradients of ``f()`` with central differences, per parameter.

    ``f`` takes no arguments and reads the current values of ``params``; every
    entry of every parameter is perturbed in place by ``+-h``. The relative
    error is ``|a - n| / max(1, |a|, |n|)``.
    """
    if get_precision() != "float64":
        raise ContractError("finite_diff_check requires float64 precision")

    with no_grad():
        first, second = _scalar(f()), _scalar(f())
    if first != second:
        raise ContractError(f"objective is non-deterministic: {first!r} != {second!r}")

    for p in params.values():
        p.zero_grad()
    backward(f())

    report = GradCheckReport(tol=tol, h=h)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = np.empty_like(p.data)
        flat = p.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = _scalar(f())
                flat[i] = orig - h
                down = _scalar(f())
                flat[i] = orig
                num_flat[i] = (up - down) / (2.0 * h)
        err = float(rel_error(analytic, numeric).max()) if p.size else 0.0
        report.params.append(
            ParamCheck(name, p.size, err, float(np.abs(analytic).max(initial=0.0)), err < tol)
        )
    return report
