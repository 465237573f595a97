"""Assemble a chat-format dataset and split it with stratification.

Run from the repo root:  python demos/02_build_and_split.py
"""

from collections import Counter

import polypersona as pp

bank = pp.load_default_bank()
store = pp.ingest_personas(pp.default_personas_path())
print(f"{len(store)} personas; categories:",
      {k: round(v, 2) for k, v in pp.category_distribution(store).items() if v})

# A plan maps domains to record counts. Forty records, four per domain.
plan = {domain: 4 for domain in pp.DOMAINS}
records = pp.assemble_dataset(store, bank, plan, seed=7)
print(f"\nassembled {len(records)} pending records")

# Each record is a (system, user, assistant) triplet plus metadata. The
# assistant turn stays empty until a generator fills it.
record = records[0]
print("record id:", record.id, "| pending:", record.pending)
print("meta:", record.meta)

# Two render modes: the exact fallback chat format (frozen by golden tests)
# and a neutral role-tagged passthrough for endpoints with server-side
# templates. input_text is always a prefix of full_text.
pair = pp.render_chatml(record, "fallback")
print("\nfallback rendering (prompt side):")
print(pair.input_text)

# Stratified splitting: largest-remainder allocation inside every stratum,
# seeded shuffles for membership, exact partition for any seed.
spec = pp.SplitSpec(fractions=(0.8, 0.1, 0.1), stratify_keys=("domain",), seed=5)
train, val, test = pp.split_dataset(records, spec)
print(f"split sizes: {len(train)}/{len(val)}/{len(test)}")
print("train domains:", dict(Counter(r.meta.domain for r in train)))

# Persona reuse analytics mirror how often personas cross domains.
report = pp.reuse_stats([(r.meta.persona_id, r.meta.domain) for r in records])
print(f"\npersona reuse: {report.fraction_single_domain:.1%} single-domain, "
      f"{report.fraction_multi_domain:.1%} multi-domain")
