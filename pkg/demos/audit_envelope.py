"""One-run canary audit of the n-gram release.

Half of 200 planted canaries are included at random. The auditor guesses the
inclusion bit of the top and bottom scoring canaries and the p-value bounds how
surprising that many correct guesses would be under the claimed epsilon.
"""
import math

from dpunion.audit import audit_pvalue, run_audit
from dpunion.data import gen_synthetic
from dpunion.dpne import DpneConfig

delta = math.exp(-10)
print(f"perfect guesses, eps=4: p = {audit_pvalue(100, 100, 4.0, delta, 200):.4f}")

corpus = gen_synthetic("zipf", 3000, 500, rng_seed=0)
for eps in (1.0, 4.0):
    res = run_audit(corpus, DpneConfig(eps, 100, max_length=4), m=200, runs=1, rng_seed=1)
    print(f"eps={eps:g}: {res.correct}/{res.total} correct, p={res.p_value:.3f}, "
          f"{'PASS' if res.passed else 'FAIL'}")

# With the noise switched off every canary is found. Claiming eps=1 for that
# release is then refuted. At eps=4 even a perfect score stays near 0.17.
res = run_audit(corpus, DpneConfig(1.0, 100, max_length=4, noiseless=True), m=200, runs=1)
print(f"noiseless: {res.correct}/{res.total} correct, p={res.p_value:.2e}")
