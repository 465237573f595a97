import json
import string
from collections import Counter
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

import polypersona as pp
from conftest import FIXTURES

FULL_PLAN = json.loads(
    (Path(pp.default_bank_path()).parent / "plan_full.json").read_text()
)

_GOLDEN_PICKS = [
    (0, "dem-open-01", "I live with my partner and our two kids; evenings are a happy blur of homework and dinner."),
    (1, "hc-lik-02", "Good. The local clinic is solid, though waits have grown."),
    (2, "tech-yn-01", "Yes, I use one every morning to check the weather."),
    (3, "work-agr-01", "I mostly agree; I have watched loyal coworkers passed over too often."),
    (4, "env-open-02", ""),
]


def _golden_records(store, bank):
    records = []
    for i, (card_idx, qid, response) in enumerate(_GOLDEN_PICKS):
        records.append(
            pp.build_record(store.cards[card_idx], bank.find(qid), response or None, index=i)
        )
    return records


class TestBuildRecord:
    def test_field_routing(self, persona, likert_question):
        record = pp.build_record(persona, likert_question, "Strongly agree, without question.")
        assert record.meta.persona_id == "p1"
        assert record.meta.domain == "healthcare"
        assert record.meta.question_id == "q-lik"
        assert record.meta.question_type == "likert"
        assert [m.role for m in record.messages] == ["system", "user", "assistant"]
        assert persona.description in record.user
        assert likert_question.text in record.user
        assert "Scale: " in record.user  # likert anchors appended
        assert not record.pending

    def test_omitted_response_is_pending(self, persona, open_question):
        record = pp.build_record(persona, open_question)
        assert record.assistant == ""
        assert record.pending

    def test_determinism_including_id(self, persona, open_question):
        a = pp.build_record(persona, open_question, "Fine.", index=3)
        b = pp.build_record(persona, open_question, "Fine.", index=3)
        assert a == b
        c = pp.build_record(persona, open_question, "Fine.", index=4)
        assert a.id != c.id


class TestRenderChatml:
    def test_golden_files_byte_identical(self, store, bank):
        for i, record in enumerate(_golden_records(store, bank), start=1):
            golden = (FIXTURES / f"golden_chatml_{i:02d}.txt").read_text(encoding="utf-8")
            assert pp.render_chatml(record, "fallback").full_text == golden

    def test_prefix_invariant_when_assistant_empty(self, persona, open_question):
        record = pp.build_record(persona, open_question)
        pair = pp.render_chatml(record, "fallback")
        assert pair.full_text == pair.input_text + "</s>"
        assert pair.input_text.endswith("<|assistant|>\n")

    def test_native_passthrough_prefix(self, persona, open_question):
        record = pp.build_record(persona, open_question, "All good.")
        pair = pp.render_chatml(record, "native_passthrough")
        assert pair.full_text.startswith(pair.input_text)
        assert "### assistant" in pair.input_text

    def test_unknown_template_rejected(self, persona, open_question):
        record = pp.build_record(persona, open_question)
        with pytest.raises(ValueError):
            pp.render_chatml(record, "fancy")

    @settings(max_examples=60)
    @given(
        contents=st.lists(
            st.text(alphabet=string.ascii_letters + string.digits + " .,", min_size=1, max_size=30),
            min_size=3, max_size=3, unique=True,
        )
    )
    def test_rendering_injective_on_contents(self, contents):
        def record_with(user, assistant):
            return pp.ChatRecord(
                id="r",
                messages=(
                    pp.Message("system", "s"),
                    pp.Message("user", user),
                    pp.Message("assistant", assistant),
                ),
                meta=pp.RecordMeta("p", "finance", "q", "open"),
            )

        a, b, c = contents
        r1 = pp.render_chatml(record_with(a, b), "fallback")
        r2 = pp.render_chatml(record_with(a, c), "fallback")
        r3 = pp.render_chatml(record_with(b, c), "fallback")
        assert r1.full_text != r2.full_text
        assert r1.full_text != r3.full_text


class TestAssemble:
    def test_full_scale_counts(self, store, bank):
        records = pp.assemble_dataset(store, bank, FULL_PLAN, seed=11)
        assert len(records) == 3568
        per_domain = Counter(r.meta.domain for r in records)
        assert per_domain == FULL_PLAN

    def test_all_zero_plan(self, store, bank):
        assert pp.assemble_dataset(store, bank, {d: 0 for d in pp.DOMAINS}, seed=1) == []

    def test_same_plan_same_seed_byte_identical(self, store, bank, tmp_path):
        plan = {"healthcare": 7, "finance": 5}
        a_path, b_path = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        pp.write_jsonl(pp.assemble_dataset(store, bank, plan, seed=3), a_path)
        pp.write_jsonl(pp.assemble_dataset(store, bank, plan, seed=3), b_path)
        assert a_path.read_bytes() == b_path.read_bytes()

    def test_records_conform_to_packaging(self, store, bank):
        records = pp.assemble_dataset(store, bank, {"healthcare": 12}, seed=2)
        for record in records:
            assert record.id.startswith("rec-")
            assert [m.role for m in record.messages] == ["system", "user", "assistant"]
            assert record.meta.persona_id in store
            assert bank.find(record.meta.question_id) is not None
            assert record.meta.question_type in pp.QUESTION_TYPES
            assert record.pending

    def test_unknown_domain_in_plan(self, store, bank):
        with pytest.raises(pp.SchemaError):
            pp.assemble_dataset(store, bank, {"astrology": 2}, seed=0)


class TestSplit:
    def _synthetic(self, store, bank):
        return pp.assemble_dataset(store, bank, FULL_PLAN, seed=17)

    def test_unstratified_sizes(self, store, bank):
        records = self._synthetic(store, bank)
        spec = pp.SplitSpec(fractions=(0.8, 0.1, 0.1), stratify_keys=(), seed=5)
        train, val, test = pp.split_dataset(records, spec)
        assert (len(train), len(val), len(test)) == (2854, 357, 357)

    def test_domain_stratified_sizes_and_shares(self, store, bank):
        records = self._synthetic(store, bank)
        spec = pp.SplitSpec(fractions=(0.8, 0.1, 0.1), stratify_keys=("domain",), seed=5)
        train, val, test = pp.split_dataset(records, spec)
        assert abs(len(train) - 2854) <= 1
        assert abs(len(val) - 357) <= 1
        assert abs(len(test) - 357) <= 1
        full = Counter(r.meta.domain for r in records)
        share = Counter(r.meta.domain for r in train)
        for domain, count in full.items():
            assert abs(share[domain] / len(train) - count / len(records)) <= 0.01

    def test_ten_per_stratum_gives_8_1_1(self, store, bank):
        records = pp.assemble_dataset(
            store, bank, {"healthcare": 10, "finance": 10, "education": 10}, seed=9
        )
        spec = pp.SplitSpec(fractions=(0.8, 0.1, 0.1), stratify_keys=("domain",), seed=1)
        train, val, test = pp.split_dataset(records, spec)
        for part, want in ((train, 8), (val, 1), (test, 1)):
            counts = Counter(r.meta.domain for r in part)
            assert all(v == want for v in counts.values())

    def test_partition_law_over_seeds(self, store, bank):
        records = pp.assemble_dataset(store, bank, {"healthcare": 23, "lifestyle": 11}, seed=2)
        ids = sorted(r.id for r in records)
        for seed in range(25):
            spec = pp.SplitSpec(stratify_keys=("domain", "qtype"), seed=seed)
            train, val, test = pp.split_dataset(records, spec)
            combined = sorted(r.id for part in (train, val, test) for r in part)
            assert combined == ids

    def test_per_stratum_within_one_of_target(self, store, bank):
        records = pp.assemble_dataset(store, bank, {"healthcare": 37, "finance": 29}, seed=4)
        spec = pp.SplitSpec(stratify_keys=("domain", "qtype"), seed=8)
        train, val, test = pp.split_dataset(records, spec)
        strata = Counter((r.meta.domain, r.meta.question_type) for r in records)
        for part, fraction in ((train, 0.8), (val, 0.1), (test, 0.1)):
            got = Counter((r.meta.domain, r.meta.question_type) for r in part)
            for key, n in strata.items():
                assert abs(got.get(key, 0) - n * fraction) < 1

    def test_empty_dataset_error(self):
        with pytest.raises(pp.EmptyDatasetError):
            pp.split_dataset([], pp.SplitSpec())

    def test_bad_fractions_rejected(self):
        with pytest.raises(pp.SchemaError):
            pp.SplitSpec(fractions=(0.5, 0.2, 0.2))
        with pytest.raises(pp.SchemaError):
            pp.SplitSpec(stratify_keys=("persona",))


class TestJsonl:
    def test_round_trip_100_records(self, store, bank, tmp_path):
        records = pp.assemble_dataset(store, bank, {"healthcare": 50, "finance": 50}, seed=6)
        path = tmp_path / "d.jsonl"
        pp.write_jsonl(records, path)
        back = pp.read_jsonl(path, kind="records")
        assert back == records

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = pp.build_record(
            pp.PersonaCard("p", "A careful reader."),
            pp.SurveyQuestion("q", "finance", "open", "Thoughts?"),
        )
        path.write_text(json.dumps(good.to_dict()) + "\n{oops\n", encoding="utf-8")
        with pytest.raises(pp.ParseError) as err:
            pp.read_jsonl(path, kind="records")
        assert err.value.line == 2

    def test_empty_list_round_trips(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        assert pp.write_jsonl([], path) == 0
        assert pp.read_jsonl(path, kind="records") == []

    def test_pairs_round_trip(self, persona, open_question, tmp_path):
        record = pp.build_record(persona, open_question, "Plenty to say.")
        pairs = [pp.render_chatml(record, t) for t in ("fallback", "native_passthrough")]
        path = tmp_path / "pairs.jsonl"
        pp.write_jsonl(pairs, path)
        assert pp.read_jsonl(path, kind="pairs") == pairs
