"""Replays the 3-item, 8-user instance on which l1-descent expands the sensitivity.

Two neighbouring databases differ by one user holding {a, b, c}. Up to the last
user the histograms stay exactly one unit apart. At the last step item b saturates
in one histogram but not the other, and the gap grows past 1.
"""
from dpunion.dpsu import l1_counterexample_trace
from dpunion.histogram import contractivity_probe

trace = l1_counterexample_trace()
for step in trace.log:
    h1 = ", ".join(f"{x:.3f}" for x in step["h1"])
    h2 = ", ".join(f"{x:.3f}" for x in step["h2"])
    print(f"user {step['user']}: H1=({h1})  H2=({h2})  gap {step['diff_norm']:.4f}")
print("final difference", tuple(round(d, 3) for d in trace.diff), f"norm {trace.norm:.4f}")

# Random neighbours near the cutoff: l2-descent never expands, l1-descent does.
print("l1 probe", round(contractivity_probe("l1", 200, rng_seed=1), 4))
print("l2 probe", round(contractivity_probe("l2", 2000, rng_seed=1), 12))
