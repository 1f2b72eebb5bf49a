"""
How the threshold prunes messages
=================================

Each agent encodes its observation into a 10-dim message. A gate scores
every directed sender/receiver pair, and scores at or below the threshold
zero out the edge. Raising the threshold can only remove edges.
"""

import numpy as np

from mcs.comm import MCSModel, ModelConfig, build_mask, comm_scores, encode_messages, gate_messages
from mcs.envs import AliceBobEnv, make_series

# %%
# Three agents from the 344 series give a 3x3 communication graph.
spec = make_series("344")[0]
env = AliceBobEnv(spec)
obs = env.reset(0)
model = MCSModel(ModelConfig(feature_dim=spec.feature_dim), seed=0)
messages = encode_messages(obs, model.encoder)
print("messages:", messages.shape)

# %%
# Noise-free scores are the softmax of (s, 0), i.e. a sigmoid of the
# additive attention logit. The diagonal of the mask is always one.
scores = comm_scores(messages, model.gate)
np.set_printoptions(precision=3, suppress=True)
print("scores[sender, receiver]:\n", scores.data)

for alpha_hat in (0.0, 0.25, 0.5, 0.75, 1.0):
    mask = build_mask(scores, alpha_hat).data
    kept = int((mask[~np.eye(3, dtype=bool)] > 0).sum())
    print(f"threshold {alpha_hat:.2f}: {kept} of 6 edges kept")

# %%
# Gating multiplies each sender's message by its mask entry. The result is
# indexed [receiver, sender, feature].
mask = build_mask(scores, 0.5)
gated = gate_messages(messages, mask)
print("gated:", gated.shape)
print("receiver 0 sees sender norms:", np.linalg.norm(gated.data[0], axis=-1))
