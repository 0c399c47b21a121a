"""A walk through the autodiff core: build a graph, run backward, check it.

Run: python3 demos/01_autodiff_basics.py
"""

import numpy as np

from rescap import tensor as T
from rescap.tensor import Tensor

print("== forward graphs are built as you compute ==")
w = Tensor([[0.5, -1.0], [2.0, 0.25]], requires_grad=True)
x = Tensor([[1.0], [3.0]])
h = T.tanh(T.matmul(w, x))
loss = T.sum_all(T.mul(h, h))
print("w @ x      ->", (w.data @ x.data).ravel())
print("tanh       ->", h.data.ravel())
print("loss       ->", loss.item())

print()
print("== backward fills .grad on every participating tensor ==")
loss.backward()
print("dloss/dw =\n", w.grad)

print()
print("== the finite-difference oracle agrees ==")


def f(params):
    return T.sum_all(T.mul(T.tanh(T.matmul(params[0], x)), T.tanh(T.matmul(params[0], x))))


w.zero_grad()
err = T.grad_check(f, [w], step=1e-5)
print(f"max relative error vs central differences: {err:.2e}")

print()
print("== strict shapes: no silent broadcasting ==")
try:
    T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
except T.ShapeError as exc:
    print("ShapeError:", exc)

print()
print("== softmax is shift-invariant and stable at huge logits ==")
print(T.softmax(Tensor([1000.0, 1000.0, 999.0])).data)
