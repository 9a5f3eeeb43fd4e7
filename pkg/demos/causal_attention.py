# What causal masking looks like from the outside.
#
#   python3 demos/causal_attention.py

import numpy as np

from transfornn.layers import AttentionParams, causal_self_attention
from transfornn.models import LanguageModel, ModelConfig
from transfornn.tensor import Tensor

rng = np.random.default_rng(3)
params = AttentionParams(8, rng)
z = Tensor(rng.normal(size=(5, 8)))

out, weights = causal_self_attention(z, params, heads=2, return_weights=True)
np.set_printoptions(precision=3, suppress=True)
print("head 0 attention weights (rows: query position, columns: key position)")
print(weights[0])
# everything above the diagonal is exactly zero

# Editing token 3 cannot move the logits at positions 0..2.
model = LanguageModel(ModelConfig("transformer", 30, d=16, n_layers=2, m_layers=0, heads=2, d_ff=32))
tokens = rng.integers(0, 30, size=7)
edited = tokens.copy()
edited[3] = (edited[3] + 1) % 30
before = model.forward(tokens)[0].data
after = model.forward(edited)[0].data
for t in range(7):
    print(f"position {t}: logits identical = {np.array_equal(before[t], after[t])}")
