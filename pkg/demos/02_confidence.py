"""
How much does a clean run prove?
================================

After n traces without a counterexample the posterior probability that the
error probability is below delta is 1 - (1 - delta)^(n+1) for plain random
sampling. Methods that find errors more easily (exponent alpha < 1 in the
effectiveness theta^alpha) earn less confidence from the same clean run.
"""
from hyc.inference import SampleTally, confidence, required_samples

for delta in (0.1, 0.05, 0.01):
    print(f"delta={delta}: traces needed for 0.99 confidence:", required_samples(delta, 0.99))

print("\nconfidence that theta < 0.01 after n clean traces")
print("    n   alpha=1  alpha=0.5  alpha=0.25")
for n in (0, 50, 100, 200, 458, 1000):
    row = [confidence(SampleTally(n, 0), 0.01, a) for a in (1.0, 0.5, 0.25)]
    print(f"{n:5d}   " + "  ".join(f"{c:8.5f}" for c in row))

# one counterexample among many clean traces
print("\nwith one negative trace among 458:", round(confidence(SampleTally(457, 1), 0.01), 5))
