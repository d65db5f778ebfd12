"""Walk through the finite-difference audit of the autodiff core.

Every primitive has a hand-written backward rule. We first differentiate one
small expression by hand, then run the full audit that the ``ran gradcheck``
command uses.
"""
import numpy as np

from ran import gradcheck
from ran import tensor as tn

rng = np.random.default_rng(0)

# A single expression: loss = sum(relu(W @ x)).
W = tn.Parameter("W", tn.Tensor(rng.standard_normal((3, 4))))
x = tn.Tensor(rng.standard_normal((4, 1)))
tape = tn.Tape()
w = tape.watch({"W": W})["W"]
loss = tn.reduce_sum(tn.relu(tn.matmul(w, x)))
grads = tape.backward(loss)

# For this loss the gradient is mask(W x > 0) times x transposed.
mask = (W.value.data @ x.data > 0).astype(float)
print("reverse mode matches the closed form:", np.allclose(grads["W"], mask @ x.data.T))

# The full audit: every primitive, then the encoder, the branch and two model variants.
errors = gradcheck.run_suite(seed=0)
width = max(map(len, errors))
for name, err in errors.items():
    print(f"{name:<{width}}  {err:.2e}")
print("worst relative error:", f"{max(errors.values()):.2e}", "threshold:", gradcheck.THRESHOLD)
