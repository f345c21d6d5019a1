# The three training signals, on numbers small enough to check by hand.
#
# f1 pulls every rewrite vector toward SOME valid token embedding,
# f2 pushes exactly one position toward the [MASK] embedding, and the
# prediction loss is a cross-entropy weighted by the soft mask
# distribution m (or a straight-through one-hot of it).

import numpy as np

from bertese import tensor as T
from bertese.rewriter import (
    mask_distribution,
    single_mask_loss,
    valid_token_loss,
)
from bertese.tensor import Tensor


def main():
    np.set_printoptions(precision=4, suppress=True)

    # a 3-row embedding table in 2-d; row 2 plays the role of [MASK]
    table = Tensor(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    mask_row = Tensor(table.data[2])

    # two positions: one sitting on a row, one floating between rows
    q_hat = Tensor(np.array([[1.0, 0.0], [0.5, 0.0]]), requires_grad=True)

    f1 = valid_token_loss(q_hat, table)
    print("q_hat:")
    print(q_hat.data)
    print(f"\nf1 = mean nearest-row sqdist = {f1.item():.4f}")
    print("  position 0 distance 0 (it IS row 1); position 1 is 0.25 from")
    print("  either of rows 0/1 -> (0 + 0.25)/2 = 0.125")

    beta = Tensor(np.array([1.0]))
    m = mask_distribution(q_hat, mask_row, beta)
    f2 = single_mask_loss(m)
    print(f"\nmask distribution m = {m.data}  (softmin of distance to [MASK])")
    print(f"f2 = -max(m) = {f2.item():.4f}")

    # sharpen beta: the same distances, but m concentrates
    sharp = mask_distribution(q_hat, mask_row, Tensor(np.array([20.0])))
    print(f"with beta=20, m = {sharp.data}  (positions differ by 0.75 sqdist)")

    # gradient of f2 pulls the argmax position toward the mask embedding
    f2.backward()
    print("\ndf2/dq_hat:")
    print(q_hat.grad)
    print("descent moves the winning position toward [MASK] at [0, 1] and,")
    print("through the softmax coupling, pushes the other position away")

    # what the straight-through estimator changes: forward vs backward
    logits = Tensor(np.array([[0.1, 0.7, 0.2]]), requires_grad=True)
    hard = T.ste_hardmax(logits)
    print(f"\nste_hardmax([0.1, 0.7, 0.2]) forward = {hard.data[0]}")
    T.reduce_sum(hard * Tensor(np.array([[3.0, 5.0, 7.0]]))).backward()
    print(f"backward passes the downstream weights straight through: "
          f"{logits.grad[0]}")


if __name__ == "__main__":
    main()
