"""Tour of the tape-based tensor engine.

Builds a tiny two-layer computation by hand, backpropagates it, and
compares every analytic gradient against central finite differences.
Then shows what the two straight-through ops do: hardmax keeps the
forward discrete while the backward pretends it was soft, and
snap_to_rows moves a point onto its nearest codebook row while letting
gradients pass through untouched.
"""

import numpy as np

from bertese import tensor as T
from bertese.tensor import Tensor


def main():
    rng = np.random.default_rng(0)

    # --- a hand-built two-layer net, checked against finite differences
    x = Tensor(rng.standard_normal((4, 3)))
    w1 = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    b1 = Tensor(np.zeros(5), requires_grad=True)
    w2 = Tensor(rng.standard_normal((5, 2)), requires_grad=True)

    def loss_fn():
        h = T.gelu(T.matmul(x, w1) + T.reshape(b1, (1, 5)))
        logits = T.matmul(h, w2)
        return T.reduce_mean(T.reduce_sum(logits * logits, axis=-1))

    loss = loss_fn()
    loss.backward()
    print(f"loss                  {loss.item():.6f}")
    print(f"dL/dw1 norm           {np.linalg.norm(w1.grad):.6f}")
    err = T.grad_check(loss_fn, [w1, b1, w2])
    print(f"finite-difference err {err:.2e}  (vector-relative, should be ~1e-9)")

    # --- straight-through hardmax: discrete forward, soft backward
    logits = Tensor(np.array([1.0, 3.0, 2.0]), requires_grad=True)
    probs = T.softmax(logits)
    hard = T.ste_hardmax(probs)
    print("\nsoftmax forward       ", np.round(probs.data, 4))
    print("ste_hardmax forward   ", hard.data)
    downstream = Tensor(np.array([0.5, -1.0, 2.0]))
    T.reduce_sum(hard * downstream).backward()
    # compare with the gradient the soft path would have received
    logits2 = Tensor(logits.data.copy(), requires_grad=True)
    T.reduce_sum(T.softmax(logits2) * downstream).backward()
    print("grad through hardmax  ", np.round(logits.grad, 4))
    print("grad through softmax  ", np.round(logits2.grad, 4))
    print("identical backward    ", bool(np.allclose(logits.grad, logits2.grad)))

    # --- snap_to_rows: quantize to a codebook, gradients skip the jump
    rows = Tensor(np.array([[0.0, 0.0], [1.0, 1.0], [4.0, 0.0]]))
    point = Tensor(np.array([[0.9, 1.2]]), requires_grad=True)
    snapped = T.snap_to_rows(point, rows)
    T.reduce_sum(snapped * snapped).backward()
    print("\npoint                 ", point.data[0])
    print("snapped to row        ", snapped.data[0])
    print("grad at the point     ", point.grad[0], " (as if snapping were identity)")


if __name__ == "__main__":
    main()
