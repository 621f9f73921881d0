from __future__ import annotations

import torch


class NonFiniteGradient(FloatingPointError):
    pass


class Adam:
    """Bias-corrected adaptive-moment optimiser over named parameters.

    Gradients are zeroed after every step. A non-finite gradient aborts the step
    before any parameter is modified.
    """

    def __init__(self, named_params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {n: torch.zeros_like(p) for n, p in self.params}
        self.v = {n: torch.zeros_like(p) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not torch.isfinite(p.grad).all():
                raise NonFiniteGradient(f"non-finite gradient in parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, p in self.params:
            if p.grad is None:
                continue
            g = p.grad
            m, v = self.m[name], self.v[name]
            m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
            v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
            denom = (v / c2).sqrt_().add_(self.eps)
            p.addcdiv_(m, denom, value=-self.lr / c1)
        self.zero_grad()


def adam_step(optimizer: Adam) -> None:
    optimizer.step()

