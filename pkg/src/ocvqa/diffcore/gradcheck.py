"""Central finite-difference check of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, backward, no_grad, precision


class NondeterministicLoss(RuntimeError):
    pass


@dataclass
class GradcheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    tolerance: float
    checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_rel_error={self.max_rel_error:.3e} tolerance={self.tolerance:.0e} "
                f"worst={self.worst_param}{list(self.worst_index) if self.worst_index else ''} "
                f"scalars_checked={self.checked}")


def rel_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def gradcheck(loss_fn: Callable[[], Tensor], params, step: float = 1e-5,
              tolerance: float = 1e-4, names: Iterable[str] | None = None,
              reference_dtype=None) -> GradcheckReport:
    """Compare ``backward`` against central differences for every scalar.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values;
    ``params`` maps names to the leaf tensors it reads.  The analytic gradient
    is always taken at the working precision.  With ``reference_dtype`` (for
    instance ``np.longdouble``) the difference quotients are evaluated in that
    wider type, which lowers their rounding noise, roughly eps * |loss| / step,
    below the 1e-8 denominator floor for gradients that are tiny but nonzero.
    """
    first = loss_fn()
    second = loss_fn()
    if first.data.tobytes() != second.data.tobytes():
        raise NondeterministicLoss(
            f"loss changed between identical evaluations: {float(first.data)!r} vs {float(second.data)!r}"
        )
    analytic = backward(second, params)
    names = list(params) if names is None else list(names)

    dtype = np.dtype(reference_dtype or first.data.dtype).type
    saved = {name: params[name].data for name in params}
    try:
        with precision(dtype), no_grad():
            for name in params:
                params[name].data = saved[name].astype(dtype)
            return _compare(loss_fn, params, names, analytic, dtype(step), tolerance)
    finally:
        for name, data in saved.items():
            params[name].data = data


def _compare(loss_fn, params, names, analytic, step, tolerance) -> GradcheckReport:
    worst, worst_name, worst_idx, checked = 0.0, None, None, 0
    per_param = {}
    for name in names:
        p = params[name].data
        g = analytic[name]
        local = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = loss_fn().data[()]
            p[idx] = orig - step
            down = loss_fn().data[()]
            p[idx] = orig
            err = rel_error(float(g[idx]), float((up - down) / (2 * step)))
            checked += 1
            local = max(local, err)
            if err > worst or worst_name is None:
                worst, worst_name, worst_idx = err, name, idx
        per_param[name] = local
    return GradcheckReport(worst, worst_name, worst_idx, tolerance, checked, per_param)
