"""Central finite-difference verification of autograd gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import torch
from torch import nn


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    layer: str
    max_rel_err: float
    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.layer}: max_rel_err={self.max_rel_err:.3e} over {self.checked} entries"


def rel_err(a: torch.Tensor, n: torch.Tensor) -> torch.Tensor:
    floor = torch.full_like(a, 1e-8)
    return (a - n).abs() / torch.maximum(torch.maximum(a.abs(), n.abs()), floor)


def _scalar(out) -> torch.Tensor:
    if isinstance(out, torch.Tensor):
        return out.sum()
    return sum(o.sum() for o in out if isinstance(o, torch.Tensor))


def grad_check(layer: nn.Module, inputs, eps: float = 1e-5, tol: float = 1e-4, name: str | None = None) -> GradCheckReport:
    """Compare autograd gradients of ``sum(layer(*inputs))`` with central differences.

    The layer is copied and promoted to float64; the caller's module is not touched.
    Every parameter entry and every floating input entry is perturbed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    label = name or type(layer).__name__
    layer = copy.deepcopy(layer).double().eval()
    if isinstance(inputs, torch.Tensor):
        inputs = (inputs,)
    inputs = tuple(
        x.detach().double().clone().requires_grad_(True) if torch.is_floating_point(x) else x for x in inputs
    )

    def f() -> torch.Tensor:
        out = _scalar(layer(*inputs))
        if not torch.isfinite(out):
            raise GradCheckError(f"non-finite forward output in layer {label}")
        return out

    for p in layer.parameters():
        p.grad = None
    f().backward()

    targets = [(f"param:{n}", p, p.grad) for n, p in layer.named_parameters()]
    targets += [(f"input:{i}", x, x.grad) for i, x in enumerate(inputs) if isinstance(x, torch.Tensor) and x.requires_grad]

    report = GradCheckReport(layer=label, max_rel_err=0.0, tol=tol)
    with torch.no_grad():
        for tname, tensor, grad in targets:
            analytic = torch.zeros_like(tensor) if grad is None else grad.detach().clone()
            numeric = torch.empty_like(tensor)
            flat, nflat = tensor.view(-1), numeric.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                flat[k] = orig + eps
                fp = f().item()
                flat[k] = orig - eps
                fm = f().item()
                flat[k] = orig
                nflat[k] = (fp - fm) / (2 * eps)
            err = float(rel_err(analytic, numeric).max()) if tensor.numel() else 0.0
            report.errors[tname] = err
            report.checked += tensor.numel()
            report.max_rel_err = max(report.max_rel_err, err)
    return report
