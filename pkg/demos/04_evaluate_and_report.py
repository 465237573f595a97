"""Score generations with the full metric stack and render report tables.

Run from the repo root:  python demos/04_evaluate_and_report.py
"""

import polypersona as pp

bank = pp.load_default_bank()
store = pp.ingest_personas(pp.default_personas_path())
records = pp.assemble_dataset(store, bank, {d: 3 for d in pp.DOMAINS}, seed=9)

# Two deterministic mock "models" stand in for a reference filler and a
# candidate under evaluation.
ref_cfg = pp.EndpointConfig(base_url="mock://local", model_name="mock-reference")
cand_cfg = pp.EndpointConfig(base_url="mock://local", model_name="mock-candidate")
references = [r.text for r in pp.generate_batch(records, ref_cfg)]
candidates = [r.text for r in pp.generate_batch(records, cand_cfg)]

# Individual metrics are plain functions.
print("BLEU :", round(pp.bleu(candidates[0], references[0]), 3))
print("R-1 F:", round(pp.rouge_n(candidates[0], references[0], 1).f1, 3))
print("R-L F:", round(pp.rouge_l(candidates[0], references[0]).f1, 3))

# evaluate_pair assembles the full per-example vector: BLEU, ROUGE-1/2/L,
# semantic F1 (greedy embedding matching), survey quality, length/sentence/
# sentiment similarity, plus distinct-1/2 diversity.
ctx = pp.EvalContext(
    provider=pp.HashedTrigramProvider(),
    lexicon=pp.default_lexicon(),
    questions={q.id: q for q in bank.questions()},
)
pairs = []
for record, cand, ref in zip(records, candidates, references):
    vector = pp.evaluate_pair(record, cand, ref, ctx)
    pairs.append((("mock-candidate", record.meta.domain), vector))

rows = pp.aggregate(pairs)
print("\nper-domain aggregate (first rows):")
print("\n".join(pp.render(rows, "markdown").splitlines()[:6]))

# Per-domain winners under a chosen criterion, lexicographic tie-break.
winners = pp.best_per_domain(rows, criterion="quality")
print("\nwinners table:")
print(pp.render_winners(winners[:4], "markdown"))

# Macro averaging collapses per-domain rows into one row per model.
print("macro-averaged:")
print(pp.render(pp.macro_average(rows), "markdown"))
