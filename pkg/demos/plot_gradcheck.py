"""
Checking the gradients
======================

Central differences in float64 against the analytic backward pass of every
differentiable op, plus a corrupted gradient that the check has to catch.
"""
from eadnet import gradcheck

# %%
# A few instances per op keep this quick; the CLI default is 20.
for op in gradcheck.CASES:
    r = gradcheck.check_op(op, instances=3, seed=0)
    print(f"{op:<18} {r.max_rel_error:.2e} {'ok' if r.passed else 'FAIL'}")

# %%
# Negative control: scale one analytic gradient and watch the check fail.
print(gradcheck.check_op("conv2d", instances=3, seed=0, corrupt=True))
