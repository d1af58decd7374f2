"""Single-layer vector quantization, step by step.

Walks through nearest-code lookup under both distance metrics, watches the
EMA update pull a code vector toward the data assigned to it, revives dead
codes from a batch, and plots a few values of the snake activation.

Run:  python3 demos/01_quantizer_basics.py
"""

import numpy as np

from rvqkit import (
    Codebook,
    ema_update,
    nearest_code,
    restart_dead_codes,
    snake,
)

rng = np.random.default_rng(0)

# --- Nearest-code lookup ----------------------------------------------------
entries = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
cb = Codebook.from_entries(entries)
query = np.array([0.9, 0.1])
hit = nearest_code(query, cb)
print(f"euclidean lookup: query {query} -> code {hit.index}, distance {hit.distance:.4f}")

cb_cos = Codebook.from_entries(np.array([[1.0, 0.0], [0.0, 1.0]]), metric="cosine")
for scale in (1.0, 5.0, 0.01):
    hit = nearest_code(scale * np.array([2.0, 0.3]), cb_cos)
    print(f"cosine lookup at scale {scale:>5}: code {hit.index}, distance {hit.distance:.6f}")
print("cosine distance ignores vector length; only the direction matters.\n")

# --- EMA codebook updates ---------------------------------------------------
# Feed a constant cluster to code 0 and watch its entry converge.
cb = Codebook(
    entries=np.full((4, 2), 3.0),
    ema_cluster_size=np.zeros(4),
    ema_embed_sum=np.zeros((4, 2)),
    usage_counts=np.zeros(4, dtype=np.int64),
)
target = np.array([-1.0, 2.0])
print("EMA pull toward a constant batch assigned to code 0:")
for step in range(1, 101):
    batch = target + 0.05 * rng.standard_normal((16, 2))
    cb = ema_update(cb, batch, np.zeros(16, dtype=int), decay=0.99)
    if step in (1, 5, 25, 100):
        print(f"  step {step:>3}: entries[0] = {np.round(cb.entries[0], 4)}")
print(f"  target was {target}\n")

# --- Dead-code restart ------------------------------------------------------
print(f"usage counts after the EMA run: {cb.usage_counts}")
batch = target + 0.05 * rng.standard_normal((32, 2))
cb2, revived = restart_dead_codes(cb, batch, threshold=1, rng=7)
print(f"restart revived {revived} dead codes; their entries are now batch members:")
for i in (1, 2, 3):
    print(f"  code {i}: {np.round(cb2.entries[i], 4)}")
print()

# --- Snake activation --------------------------------------------------------
xs = np.array([0.0, np.pi / 4, np.pi / 2, np.pi, 2.0])
print("snake(x) = x + sin^2(alpha x) / alpha")
for alpha in (1.0, 2.0):
    print(f"  alpha={alpha}: {np.round(snake(xs, alpha), 4)}")
print("the nonlinear part repeats with period pi/alpha, which suits periodic signals.")
