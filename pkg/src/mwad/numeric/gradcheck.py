"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError


@dataclass
class GradCheckReport:
    max_rel_error: float
    offending: tuple | None  # (parameter name, flat index) of the worst entry
    passed: bool
    n_checked: int
    tolerance: float

    def __str__(self):
        verdict = "pass" if self.passed else "FAIL"
        where = f" at {self.offending[0]}[{self.offending[1]}]" if self.offending else ""
        return f"gradcheck {verdict}: max rel err {self.max_rel_error:.3e}{where} over {self.n_checked} entries"


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def check_function(loss_fn, analytic, params, epsilon=1e-5, tolerance=1e-4):
    """Compare ``analytic`` gradients against central differences of ``loss_fn``.

    ``params`` maps names to arrays that ``loss_fn`` reads; they are perturbed
    in place and restored. ``analytic`` maps the same names to gradients.
    """
    worst, where, count = 0.0, None, 0
    for name, arr in params.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise ContractError(f"gradient for {name!r} has shape {grad.shape}, parameter {arr.shape}")
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = _scalar(loss_fn())
            flat[k] = orig - epsilon
            down = _scalar(loss_fn())
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = relative_error(gflat[k], numeric)
            count += 1
            if err > worst or where is None:
                worst, where = err, (name, k)
    return GradCheckReport(worst, where, worst < tolerance, count, tolerance)


def _scalar(v):
    v = np.asarray(v, dtype=np.float64)
    if v.size != 1:
        raise ContractError(f"loss must be scalar, got shape {v.shape}")
    return float(v.reshape(()))


def grad_check(graph, params=None, epsilon=1e-5, tolerance=1e-4, inputs=None, loss=None):
    """Finite-difference check of ``graph``'s backward pass for the named parameters."""
    loss = loss if loss is not None else graph.nodes[-1]
    if loss.shape != (1, 1):
        raise ContractError(f"loss node {loss.name!r} has shape {loss.shape}; expected scalar")
    names = list(graph.params) if params is None else list(params)
    graph.forward(inputs, loss)
    grads = graph.backward(loss)
    return check_function(
        lambda: graph.forward(inputs, loss),
        {k: grads[k] for k in names},
        {k: graph.params[k] for k in names},
        epsilon,
        tolerance,
    )
