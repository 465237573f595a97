"""Fill assistant turns through the generation client.

Uses the built-in mock endpoint so the demo runs offline; point
``base_url`` at any chat-completions server to generate for real (the
API key is read from the POLYPERSONA_API_KEY environment variable).

Run from the repo root:  python demos/03_generate_mock.py
"""

import tempfile

import polypersona as pp

bank = pp.load_default_bank()
store = pp.ingest_personas(pp.default_personas_path())
records = pp.assemble_dataset(store, bank, {"technology": 5, "finance": 5}, seed=3)

cfg = pp.EndpointConfig(
    base_url="mock://local",   # deterministic offline responder
    model_name="mock-small",
    temperature=0.7,
    max_tokens=256,
    max_in_flight=4,
)

with tempfile.TemporaryDirectory() as tmp:
    cache = pp.DiskCache(tmp)

    results = pp.generate_batch(records, cfg, cache)
    print("first pass:")
    for r in results[:3]:
        print(f"  {r.record_id} cached={r.cached} attempts={r.attempt_count}")
        print(f"    {r.text[:90]}...")

    # The cache is content-addressed by (model, rendered prompt, temperature,
    # max_tokens); a rerun performs zero network calls and returns the same text.
    rerun = pp.generate_batch(records, cfg, cache)
    print("\nrerun cached:", all(r.cached for r in rerun))
    assert [r.text for r in rerun] == [r.text for r in results]

# Results come back in input order with per-record error isolation; a batch
# never aborts because one record failed.
filled = [rec.with_response(res.text) for rec, res in zip(records, rerun)]
print("\nfilled record sample:")
print(filled[0].assistant[:120], "...")
