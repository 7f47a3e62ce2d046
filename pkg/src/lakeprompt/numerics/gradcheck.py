"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError
from .rng import make_rng


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst: str
    per_param: dict = field(default_factory=dict)
    checked: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def rel_err(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f, store, tolerance=1e-4, step=1e-3, sample=100, seed=0, names=None) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` with central differences.

    Tensors with more than ``sample`` elements are checked on a seeded sample
    of ``sample`` elements; smaller ones on every element.
    """
    names = list(store.names()) if names is None else list(names)
    store.zero_grad()
    f().backward()
    analytic = {n: store.grad_of(n).copy() for n in names}
    for n in names:
        if not np.isfinite(analytic[n]).all():
            raise NonFiniteError(f"non-finite analytic gradient for {n}")
    rng = make_rng("grad_check", seed)
    report = GradCheckReport(0.0, "", tolerance=tolerance)
    for n in names:
        p = store[n]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= sample else np.sort(rng.choice(flat.size, sample, replace=False))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = float(f().data)
            flat[i] = orig - step
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"non-finite loss while perturbing {n}")
            num = (fp - fm) / (2.0 * step)
            worst = max(worst, rel_err(float(analytic[n].reshape(-1)[i]), num))
        report.per_param[n] = worst
        report.checked += len(idx)
        if worst >= report.max_rel_err:
            report.max_rel_err, report.worst = worst, n
    return report
