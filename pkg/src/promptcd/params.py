"""Trainable parameter store and the Adam update rule.

Every trainable array lives in a ParameterStore under a semantic tag
(e.g. "p_o", "alpha:src1", "ncdm_f3_w"). Adam moment buffers persist in
the store so checkpoints capture the full optimizer state.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import PromptCDError, StateError


class Param(Tensor):
    """A leaf tensor with Adam moment buffers and a freeze switch."""

    __slots__ = ("m", "v", "frozen")

    def __init__(self, data, tag):
        super().__init__(data, requires_grad=True, tag=tag)
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.frozen = False


class ParameterStore:
    """Tag -> Param mapping shared by a model and its optimizer."""

    def __init__(self):
        self._params = {}
        self.adam_t = 0
        self._forward_pending = False

    def add(self, tag, data):
        if tag in self._params:
            raise PromptCDError(f"duplicate parameter tag {tag!r}")
        p = Param(data, tag)
        self._params[tag] = p
        return p

    def __getitem__(self, tag):
        try:
            return self._params[tag]
        except KeyError:
            raise KeyError(f"no parameter tagged {tag!r}") from None

    def __contains__(self, tag):
        return tag in self._params

    def tags(self):
        return list(self._params)

    def params(self):
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    # The forward/backward handshake: models mark a completed forward,
    # the trainer consumes it with backward(), the optimizer step clears it.

    def mark_forward(self):
        self._forward_pending = True

    def backward(self, loss):
        if not self._forward_pending:
            raise StateError("backward called without a recorded forward pass")
        loss.backward()

    def check_finite(self, what="values"):
        for tag, p in self._params.items():
            if not np.all(np.isfinite(p.data)):
                raise PromptCDError(f"non-finite {what} in parameter {tag!r}")


def adam_step(store, lr=2e-3, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update over every unfrozen parameter."""
    b1, b2 = betas
    store.adam_t += 1
    t = store.adam_t
    for tag in store.tags():
        p = store[tag]
        if p.frozen or p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise PromptCDError(f"non-finite gradient for parameter {tag!r}")
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** t)
        v_hat = p.v / (1.0 - b2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.check_finite()
    store._forward_pending = False


class Adam:
    """Thin stateful wrapper around adam_step with fixed hyperparameters."""

    def __init__(self, store, lr=2e-3, betas=(0.9, 0.999), eps=1e-8):
        self.store = store
        self.lr = lr
        self.betas = betas
        self.eps = eps

    def step(self):
        adam_step(self.store, self.lr, self.betas, self.eps)


def finite_difference_check(build_loss, params, h=1e-4, rtol=1e-4, atol=1e-8):
    """Compare analytic gradients of build_loss() against central differences.

    build_loss must rebuild the graph from the params' current values each
    call. Returns the worst (tag, index, analytic, numeric) tuple; raises
    AssertionError on disagreement.
    """
    for p in params:
        p.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {p.tag: p.grad.copy() for p in params}
    worst = None
    for p in params:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            ana = analytic[p.tag].reshape(-1)[i]
            err = abs(ana - numeric)
            tol = atol + rtol * max(abs(ana), abs(numeric))
            if worst is None or err - tol > worst[0]:
                worst = (err - tol, p.tag, i, ana, numeric)
            if err > tol:
                raise AssertionError(
                    f"gradient mismatch for {p.tag}[{i}]: "
                    f"analytic {ana:.10g} vs numeric {numeric:.10g}"
                )
    return worst
