from typing import Callable, Mapping, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel

from app.tensor.tensor import Tensor, float64
from app.utils.error import NonFiniteError, ShapeError

REL_FLOOR = 1e-8


class InputCheck(BaseModel):
    max_rel_error: float
    # diagnostics only; `passed` never looks at them
    max_abs_error: float
    max_elementwise_rel_error: float
    checked_elements: int


class GradCheckReport(BaseModel):
    op: str
    max_rel_error: float
    max_abs_error: float
    max_elementwise_rel_error: float
    per_input: dict[str, InputCheck]
    tol: float
    passed: bool


def _evaluate(fn: Callable[..., Tensor], tensors: list[Tensor]) -> Tensor:
    out = fn(*tensors)
    if out.size != 1:
        raise ShapeError(f"gradcheck closure must return a scalar, got shape {list(out.shape)}")
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("gradcheck closure returned a non-finite value")
    return out


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Mapping[str, np.ndarray],
    eps: float = 1e-3,
    tol: float = 1e-4,
    max_elements: Optional[int] = None,
    seed: int = 0,
    op: str = "closure",
) -> GradCheckReport:
    """
    Compare recorded backward gradients against central differences.

    `fn` receives one Tensor per entry of `inputs` (in order) and returns a
    scalar. Everything runs in 64-bit mode. For every checked element the
    error |a - n| is divided by max(|a|, |n|, 1e-8), where |a| and |n| are the
    largest analytic and numeric magnitudes over that input's checked
    elements. The check passes when the largest such ratio is below `tol`.
    The per-element ratio |a - n| / max(|a_i|, |n_i|, 1e-8) is reported too.
    `max_elements` samples that many coordinates per input (seeded).
    """
    rng = np.random.default_rng(seed)
    per_input: dict[str, InputCheck] = {}
    with float64():
        arrays = {name: np.array(value, dtype=np.float64) for name, value in inputs.items()}
        leaves = [Tensor(a.copy(), requires_grad=True, name=n) for n, a in arrays.items()]
        out = _evaluate(fn, leaves)
        out.backward()

        constants = [Tensor(a) for a in arrays.values()]
        for position, (name, base) in enumerate(arrays.items()):
            analytic = leaves[position].grad
            if analytic is None:
                analytic = np.zeros_like(base)
            flat_indices = np.arange(base.size)
            if max_elements is not None and base.size > max_elements:
                flat_indices = np.sort(rng.choice(base.size, size=max_elements, replace=False))

            checked_analytic, checked_numeric = [], []
            for flat in flat_indices:
                idx = np.unravel_index(flat, base.shape)
                values = []
                for delta in (eps, -eps):
                    shifted = base.copy()
                    shifted[idx] += delta
                    args = list(constants)
                    args[position] = Tensor(shifted)
                    values.append(float(_evaluate(fn, args).data))
                checked_numeric.append((values[0] - values[1]) / (2.0 * eps))
                checked_analytic.append(float(analytic[idx]))

            a, n = np.asarray(checked_analytic), np.asarray(checked_numeric)
            diff = np.abs(a - n)
            scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), REL_FLOOR)
            pointwise = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
            per_input[name] = InputCheck(
                max_rel_error=float(diff.max(initial=0.0) / scale),
                max_abs_error=float(diff.max(initial=0.0)),
                max_elementwise_rel_error=float(pointwise.max(initial=0.0)),
                checked_elements=len(flat_indices),
            )

    max_rel = max((c.max_rel_error for c in per_input.values()), default=0.0)
    max_abs = max((c.max_abs_error for c in per_input.values()), default=0.0)
    report = GradCheckReport(
        op=op,
        max_rel_error=max_rel,
        max_abs_error=max_abs,
        max_elementwise_rel_error=max((c.max_elementwise_rel_error for c in per_input.values()), default=0.0),
        per_input=per_input,
        tol=tol,
        passed=max_rel < tol,
    )
    level = "DEBUG" if report.passed else "WARNING"
    logger.log(level, f"gradcheck {op}: max rel err {max_rel:.3e}, max abs err {max_abs:.3e}")
    return report
