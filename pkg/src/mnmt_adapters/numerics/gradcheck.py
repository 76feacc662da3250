"""Central finite-difference gradient checking."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradTape


class NondeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: str | None
    per_param: dict = field(default_factory=dict)

    def __str__(self):
        lines = [f"max_rel_err={self.max_rel_err:.3e} worst={self.worst_param}"]
        lines += [f"  {k}: {v:.3e}" for k, v in self.per_param.items()]
        return "\n".join(lines)


def rel_error(analytic, numeric):
    """Normwise relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``; 0 when both vanish."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(f, params, eps=1e-5, max_elements=None, seed=0):
    """Compare tape gradients of scalar ``f()`` with central differences.

    ``params`` is a list of tensors (or ``(name, tensor)`` pairs) whose
    ``data`` is perturbed in place and restored. ``max_elements`` caps how
    many entries per tensor are probed (sampled with ``seed``).
    """
    named = [p if isinstance(p, tuple) else (p.name or f"param{i}", p) for i, p in enumerate(params)]
    tensors = [t for _, t in named]

    first = float(f().data)
    if float(f().data) != first:
        raise NondeterministicError("two forward passes disagree; fix the seed or disable dropout")

    with GradTape() as tape:
        loss = f()
    grads = tape.gradient(loss, tensors)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, None)
    for name, t in named:
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        numeric = np.empty(idx.size, dtype=np.float64)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        analytic = grads[t].reshape(-1)[idx].astype(np.float64)
        err = rel_error(analytic, numeric)
        report.per_param[name] = err
        if report.worst_param is None or err > report.max_rel_err:
            report.max_rel_err, report.worst_param = err, name
    return report
