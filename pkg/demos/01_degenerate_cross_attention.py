"""Why cross-attention against one pooled token is a constant affine map.

Builds a random cross-attention site, shows that the softmax scores are
identically 1.0 whatever the query sequence is, and that the whole site
collapses to a single precomputable matrix acting on the embedding.
"""

import numpy as np

from vcut import cross_attention, fold_site, random_attention_site
from vcut.tensorops import Rng

rng = Rng(2024)

print("=" * 70)
print("1. One pooled conditioning token => one key per query")
print("=" * 70)

site = random_attention_site(rng, "sca", channels=16, heads=4, cross_dim=64,
                             dtype=np.float64, site_id="demo.sca")
x = rng.uniform(-5.0, 5.0, (2, 6, 16), np.float64)     # [batch, tokens, channels]
e = rng.uniform(-1.0, 1.0, (2, 1, 64), np.float64)     # [batch, 1, embed]

out, scores = cross_attention(site, x, e, return_scores=True)
print(f"query sequence: {x.shape}, pooled embedding: {e.shape}")
print(f"attention scores after softmax: shape {scores.shape}")
print(f"  every element == 1.0 exactly: {bool((scores == 1.0).all())}")

print()
print("=" * 70)
print("2. The output ignores the queries entirely")
print("=" * 70)
x_other = rng.uniform(-5.0, 5.0, (2, 6, 16), np.float64)
out_other = cross_attention(site, x_other, e)
print(f"same embedding, different queries -> identical outputs: "
      f"{bool(np.array_equal(out, out_other))}")
print(f"output rows constant along the token axis: {bool((out == out[:, :1, :]).all())}")

print()
print("=" * 70)
print("3. Folding value+output projections into one affine map")
print("=" * 70)
folded = fold_site(site)
vec = folded(e)  # [batch, channels], computable once and cached
diff = np.abs(out - vec[:, None, :]).max()
print(f"folded weight: {folded.weight.shape} (embed -> channels), bias: {folded.bias.shape}")
print(f"max |attention output - folded map|: {diff:.3e}")
print()
print("The four projection matrices plus softmax reduce to one matrix-vector")
print("product per run. Nothing about the folded value depends on the latent")
print("or the timestep, so a sampler computes it once and reuses it.")
