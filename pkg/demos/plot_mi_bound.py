"""
The variational bound behind the prediction loss
================================================

Training the predictor maximises E[log q(a | m)]. Adding the action
entropy gives a lower bound on I(A; M) that is tight when q equals the
true conditional. Here we check that on small discrete joints.
"""

import numpy as np

from mcs.predictor import mi_bound_check, mutual_information, true_conditional

rng = np.random.default_rng(0)

# %%
# A random 4x4 joint over (action, message) and three candidate decoders:
# the truth, a blend towards uniform, and pure uniform.
joint = rng.random((4, 4)) ** 3
joint /= joint.sum()
truth = true_conditional(joint)
uniform = np.full((4, 4), 0.25)
print(f"exact MI: {mutual_information(joint):.4f} nats")
for w in (1.0, 0.5, 0.0):
    q = w * truth + (1 - w) * uniform
    mi, bound = mi_bound_check(joint, q)
    print(f"weight on truth {w:.1f}: bound {bound:.4f}")

# %%
# A noiseless channel: the message names the action, so MI is ln 4.
mi, bound = mi_bound_check(np.eye(4) / 4, true_conditional(np.eye(4) / 4))
print(f"identity channel: MI {mi:.4f}, bound {bound:.4f}, ln 4 = {np.log(4):.4f}")
