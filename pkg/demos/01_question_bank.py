"""Tour of the question bank: loading, validation, and seeded sampling.

Run from the repo root:  python demos/01_question_bank.py
"""

from collections import Counter

import polypersona as pp

# The bundled bank holds 82 items across ten domains, organized
# domain -> question type -> questions.
bank = pp.load_default_bank()
print(f"loaded {len(bank)} questions; provenance: {bank.provenance[:60]}...")
print("type mix:", dict(Counter(q.qtype for q in bank.questions())))

# validate_bank is total: it returns violation descriptors instead of raising.
violations = pp.validate_bank(bank)
print("violations:", violations or "none")

# Sampling is type-balanced. The allocation floors the exact quotas and
# assigns leftover seats in proportion to the fractional remainders, so the
# long-run type mix matches the ratios even for single-question draws.
questions = pp.sample_questions(bank, "healthcare", 10, seed=0)
print("\n10 healthcare questions (seed 0):")
for q in questions:
    print(f"  [{q.qtype:9s}] {q.id}: {q.text[:60]}")

# Same seed, same sequence - reproducible on any platform.
again = pp.sample_questions(bank, "healthcare", 10, seed=0)
assert [q.id for q in again] == [q.id for q in questions]

# Empirical frequencies over many single draws track the default ratios.
counts = Counter(
    pp.sample_questions(bank, "healthcare", 1, seed=s)[0].qtype for s in range(2000)
)
print("\nsingle-draw frequencies over 2000 seeds:")
for qtype, target in pp.DEFAULT_TYPE_RATIOS.as_dict().items():
    print(f"  {qtype:10s} target {target:.3f} observed {counts.get(qtype, 0) / 2000:.3f}")
