"""Minimal reverse-mode recording over the sparse layer ops.

Each op appends a closure that, given the gradient of its output, accumulates
gradients into its inputs and parameters. Only what the network needs.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from sparsemos.sparse import ops
from sparsemos.sparse.kernel import KernelMap


class Var:
    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = data
        self.grad: Optional[np.ndarray] = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


class Tape:
    """Records ops on :class:`Var` values; parameter grads land in ``self.param_grads``."""

    def __init__(self, params: dict[str, np.ndarray], train: bool, record: bool = True):
        self.params = params
        self.train = train
        self.record = record
        self._backward: list[Callable[[], None]] = []
        self.param_grads: dict[str, np.ndarray] = {}

    def _push(self, fn: Callable[[], None]) -> None:
        if self.record:
            self._backward.append(fn)

    def _grad_param(self, name: str, g: np.ndarray) -> None:
        if name in self.param_grads:
            self.param_grads[name] += g
        else:
            self.param_grads[name] = g.astype(self.params[name].dtype, copy=True)

    def conv(self, x: Var, kmap: KernelMap, name: str) -> Var:
        bias = self.params.get(f"{name}.bias")
        p = ops.ConvParams(self.params[f"{name}.weight"], bias)
        out = Var(ops.conv_forward(x.data, kmap, p))

        def back() -> None:
            if out.grad is None:
                return
            g = ops.conv_backward(out.grad, x.data, kmap, p)
            self._grad_param(f"{name}.weight", g.grad_weights)
            if g.grad_bias is not None:
                self._grad_param(f"{name}.bias", g.grad_bias)
            x.accumulate(g.grad_input)

        self._push(back)
        return out

    def batchnorm(self, x: Var, name: str) -> Var:
        state = ops.NormState(
            gamma=self.params[f"{name}.gamma"],
            beta=self.params[f"{name}.beta"],
            running_mean=self.params[f"{name}.running_mean"],
            running_var=self.params[f"{name}.running_var"],
        )
        y, cache = ops.batchnorm_forward(x.data, state, self.train)
        out = Var(y)

        def back() -> None:
            if out.grad is None:
                return
            dx, dgamma, dbeta = ops.batchnorm_backward(out.grad, cache, state)
            self._grad_param(f"{name}.gamma", dgamma)
            self._grad_param(f"{name}.beta", dbeta)
            x.accumulate(dx)

        self._push(back)
        return out

    def relu(self, x: Var) -> Var:
        out = Var(ops.relu_forward(x.data))

        def back() -> None:
            if out.grad is not None:
                x.accumulate(ops.relu_backward(out.grad, out.data))

        self._push(back)
        return out

    def add(self, a: Var, b: Var) -> Var:
        out = Var(a.data + b.data)

        def back() -> None:
            if out.grad is not None:
                a.accumulate(out.grad)
                b.accumulate(out.grad)

        self._push(back)
        return out

    def concat(self, a: Var, b: Var) -> Var:
        ca = a.data.shape[1]
        out = Var(np.concatenate([a.data, b.data], axis=1))

        def back() -> None:
            if out.grad is not None:
                a.accumulate(out.grad[:, :ca])
                b.accumulate(out.grad[:, ca:])

        self._push(back)
        return out

    def softmax(self, x: Var) -> Var:
        out = Var(ops.softmax_forward(x.data))

        def back() -> None:
            if out.grad is not None:
                x.accumulate(ops.softmax_backward(out.grad, out.data))

        self._push(back)
        return out

    def backward(self, out: Var, grad: np.ndarray) -> dict[str, np.ndarray]:
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        out.grad = grad
        for fn in reversed(self._backward):
            fn()
        self._backward.clear()
        return self.param_grads
