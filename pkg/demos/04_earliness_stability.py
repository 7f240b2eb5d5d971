"""Walkthrough: why top-1 accuracy is not enough for early assessment.

Two models can share the same accuracy while one locks onto the right
answer in minute 3 and the other drifts in and out near the end. The
earliness-stability family scores exactly that difference: a window "hits"
when it is correct with confidence strictly above tau, the earliest hit sets
the earliness term, and hits over the following n-1 windows add stability.
"""

import numpy as np

from snapscore.metrics import (PredictionStream, es, esv, evaluate, mean_es,
                               stream_hits)


def stream_with_hits(hit_windows, label=1, c=5, p=18):
    probs = np.full((p, c), 1.0 / c)
    for w in hit_windows:
        probs[w - 1] = 0.05
        probs[w - 1, label] = 0.8
    return PredictionStream("demo", probs, label, w_max=18)


early_and_stable = stream_with_hits(range(3, 19))     # hits from w=3 onward
late_but_stable = stream_with_hits(range(12, 19))     # hits from w=12
early_flicker = stream_with_hits([3, 9, 15])          # early but unstable

for name, s in [("early+stable", early_and_stable),
                ("late+stable", late_but_stable),
                ("early flicker", early_flicker)]:
    hits = np.flatnonzero(stream_hits(s, tau=0.7)) + 1
    print(f"{name:14s} hits at {hits.tolist()}")
    for n in (1, 3, 5):
        print(f"  ES(n={n}) = {es(n, s, tau=0.7):.4f}")
    print(f"  meanES  = {mean_es([s], tau=0.7):.4f}")

# Both early streams share the same first hit; stability separates them.
# Averaging over videos gives ESV(n), and meanES averages n in {1, 3, 5}.
videos = [early_and_stable, late_but_stable, early_flicker]
print("\ncohort ESV(3):", round(esv(3, videos, tau=0.7), 4))
print("cohort meanES:", round(mean_es(videos, tau=0.7), 4))

# The evaluate() helper adds the window-averaged classification metrics.
report = evaluate(videos, tau=0.7)
print("\nfull report:", {k: round(v, 3) for k, v in report.summary().items()})
