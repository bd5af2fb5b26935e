"""Gradient, oracle and padding checks, as run by ``capemine verify``.

Runs the suites once clean and once with the backward pass of ``sigmoid``
deliberately scaled, to show that the checks notice a broken gradient.
The end-to-end model check is skipped here to keep the demo short.

    python demos/verify_tour.py
"""

from capemine import tensor as T
from capemine import verify

clean = verify.gradient_suite(seed=0, e2e=False)
print(verify.format_table(clean))

with T.inject_fault("sigmoid"):
    broken = verify.gradient_suite(seed=0, e2e=False)
print("\nwith a corrupted sigmoid backward pass:")
print("  failing checks:", ", ".join(r.name for r in broken if not r.passed))

print()
print(verify.format_table(verify.attention_suite(seed=0, instances=20) + verify.lambda_suite(seed=0)))
