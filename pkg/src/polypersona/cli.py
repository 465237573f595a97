"""Command-line entry point: the pipeline as subcommands.

Subcommands: ``validate``, ``build-dataset``, ``split``, ``generate``,
``evaluate``, ``report``. Flags may also come from a single JSON or TOML
config file (``--config``), with explicit flags winning. Every invocation
that writes artifacts also writes a run manifest (the effective config plus
content hashes of inputs and outputs) so runs can be compared and
reproduced byte for byte. All randomness comes from explicit seeds; nothing
reads the clock or global RNG state.

Exit codes: 0 on success, 1 on domain errors (bad data, endpoint
failures), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import __version__
from .dataset_builder import (
    SplitSpec,
    assemble_dataset,
    read_jsonl,
    split_dataset,
    write_jsonl,
)
from .errors import ConfigError, ParseError, PolypersonaError
from .eval_stack import (
    EvalContext,
    HashedTrigramProvider,
    MetricVector,
    default_lexicon,
    evaluate_pair,
    load_lexicon,
)
from .generation_client import DiskCache, EndpointConfig, generate_batch
from .persona_store import ingest_personas
from .question_bank import (
    DOMAINS,
    TypeRatios,
    load_question_bank,
    validate_bank,
)
from .report import (
    aggregate,
    best_per_domain,
    macro_average,
    render,
    render_winners,
)

_TOML_SECTION_RE = re.compile(r"^\[([A-Za-z0-9_.-]+)\]$")
_TOML_KV_RE = re.compile(r"^([A-Za-z0-9_-]+)\s*=\s*(.+)$")


def _parse_toml_value(raw: str, where: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    if raw.startswith("[") and raw.endswith("]"):
        inner = raw[1:-1].strip()
        if not inner:
            return []
        return [_parse_toml_value(part, where) for part in inner.split(",")]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse TOML value {raw!r}")


def _load_toml_subset(text: str, path: str) -> dict:
    """Parse the flat TOML subset used for run configs.

    Supports ``[section]`` tables and ``key = value`` pairs with string,
    number, boolean, and scalar-array values, plus ``#`` comments. (The
    interpreter this package targets predates :mod:`tomllib`, and a full
    TOML parser is not worth a dependency for flat config files.)
    """
    out: dict[str, Any] = {}
    section: dict[str, Any] = out
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if '"' not in stripped and "#" in stripped:
            stripped = stripped.split("#", 1)[0].strip()
        m = _TOML_SECTION_RE.match(stripped)
        if m:
            section = out.setdefault(m.group(1), {})
            continue
        m = _TOML_KV_RE.match(stripped)
        if not m:
            raise ConfigError(f"{path}:{lineno}: cannot parse config line {stripped!r}")
        section[m.group(1)] = _parse_toml_value(m.group(2), f"{path}:{lineno}")
    return out


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        return data
    return _load_toml_subset(text, str(path))


def _section(config: Mapping, command: str) -> Mapping:
    return config.get(command.replace("-", "_"), {})


def _pick(flag_value, section: Mapping, key: str, default=None):
    if flag_value is not None:
        return flag_value
    if key in section:
        return section[key]
    return default


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    command: str,
    effective: Mapping[str, Any],
    inputs: Sequence[str | Path],
    outputs: Sequence[str | Path],
    manifest_path: Path,
) -> None:
    manifest = {
        "tool": "polypersona",
        "version": __version__,
        "command": command,
        "effective_config": dict(sorted(effective.items())),
        "inputs": {str(p): _sha256_file(Path(p)) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): _sha256_file(Path(p)) for p in outputs if Path(p).is_file()},
    }
    manifest_path.write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _parse_plan(spec: str) -> dict[str, int]:
    """A plan is either a JSON file mapping domain to count, or an inline
    ``domain=count,domain=count`` string."""
    path = Path(spec)
    if path.is_file():
        data = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError("plan file must hold a JSON object of domain counts")
        return {str(k): int(v) for k, v in data.items()}
    plan: dict[str, int] = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigError(f"bad plan entry {part!r}; expected domain=count")
        domain, _, count = part.partition("=")
        plan[domain.strip()] = int(count)
    return plan


def _parse_ratios(spec: str | None) -> TypeRatios:
    if not spec:
        return TypeRatios()
    values: dict[str, float] = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigError(f"bad ratio entry {part!r}; expected qtype=fraction")
        qtype, _, frac = part.partition("=")
        values[qtype.strip()] = float(frac)
    return TypeRatios(**values)


def _parse_fractions(spec: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in spec.split(",")]
    if len(parts) != 3:
        raise ConfigError("fractions must be three comma-separated numbers")
    return (float(parts[0]), float(parts[1]), float(parts[2]))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polypersona",
        description="Persona-grounded synthetic survey dataset and evaluation pipeline.",
    )
    parser.add_argument("--config", help="JSON or TOML config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a question bank (and optionally personas)")
    p.add_argument("--bank", help="question bank JSON file")
    p.add_argument("--personas", help="persona JSONL or text file")

    p = sub.add_parser("build-dataset", help="assemble pending chat records from a plan")
    p.add_argument("--bank")
    p.add_argument("--personas")
    p.add_argument("--plan", help="JSON file of domain counts, or inline domain=count,...")
    p.add_argument("--ratios", help="question-type mix, e.g. open=0.427,likert=0.317,...")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("split", help="stratified train/val/test split of a dataset")
    p.add_argument("--in", dest="input")
    p.add_argument("--fractions", help="e.g. 0.8,0.1,0.1")
    p.add_argument("--stratify", help="comma list from: domain,qtype")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")

    p = sub.add_parser("generate", help="fill assistant turns via a chat endpoint")
    p.add_argument("--in", dest="input")
    p.add_argument("--endpoint", help="base URL, or mock://local for the offline responder")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--cache", help="directory for the content-addressed response cache")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--max-in-flight", type=int)
    p.add_argument(
        "--out-format",
        choices=("generations", "records"),
        help="generations: {record_id, model, text} lines; records: filled dataset records",
    )

    p = sub.add_parser("evaluate", help="score generations against references")
    p.add_argument("--generations", help="generations JSONL from the generate step")
    p.add_argument("--references", help="dataset JSONL whose assistant turns are the references")
    p.add_argument("--bank", help="bank for anchor-aware quality scoring")
    p.add_argument("--lexicon", help="sentiment lexicon path (bundled list by default)")
    p.add_argument("--out")

    p = sub.add_parser("report", help="aggregate metrics into a table")
    p.add_argument("--in", dest="input")
    p.add_argument("--group", help="model or model,domain")
    p.add_argument("--format", choices=("markdown", "csv"))
    p.add_argument("--out")
    p.add_argument("--best-per-domain", action="store_true", default=None,
                   help="emit the per-domain winners table instead")
    p.add_argument("--criterion", help="winner criterion field (default quality)")
    p.add_argument("--averaging", choices=("micro", "macro"),
                   help="micro: mean over examples; macro: mean of per-domain means")
    return parser


def _cmd_validate(args, section) -> int:
    bank_path = _pick(args.bank, section, "bank")
    personas_path = _pick(args.personas, section, "personas")
    if not bank_path and not personas_path:
        raise ConfigError("validate needs --bank and/or --personas")
    status = 0
    if bank_path:
        bank = load_question_bank(bank_path)
        violations = validate_bank(bank)
        for violation in violations:
            print(str(violation), file=sys.stderr)
        if violations:
            status = 1
        else:
            print(f"bank OK: {len(bank)} questions across {len(DOMAINS)} domains")
    if personas_path:
        store = ingest_personas(personas_path)
        for skip in store.skipped:
            print(f"skipped line {skip.line}: {skip.reason}", file=sys.stderr)
        print(f"personas OK: {len(store)} cards ({len(store.skipped)} lines skipped)")
    return status


def _cmd_build_dataset(args, section, parser) -> int:
    bank_path = _pick(args.bank, section, "bank")
    personas_path = _pick(args.personas, section, "personas")
    plan_spec = _pick(args.plan, section, "plan")
    out = _pick(args.out, section, "out")
    seed = _pick(args.seed, section, "seed")
    ratios_spec = _pick(args.ratios, section, "ratios")
    for name, value in (("--bank", bank_path), ("--personas", personas_path),
                        ("--plan", plan_spec), ("--out", out)):
        if value is None:
            parser.error(f"build-dataset requires {name}")
    if seed is None:
        parser.error("build-dataset requires an explicit --seed")

    bank = load_question_bank(bank_path)
    store = ingest_personas(personas_path)
    plan = _parse_plan(str(plan_spec))
    ratios = _parse_ratios(ratios_spec) if isinstance(ratios_spec, str) else (
        TypeRatios(**ratios_spec) if isinstance(ratios_spec, Mapping) else TypeRatios()
    )
    records = assemble_dataset(store, bank, plan, ratios=ratios, seed=int(seed))
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = write_jsonl(records, out_path)
    effective = {
        "bank": str(bank_path), "personas": str(personas_path),
        "plan": plan, "ratios": ratios.as_dict(), "seed": int(seed), "out": str(out),
    }
    inputs = [bank_path, personas_path]
    if Path(str(plan_spec)).is_file():
        inputs.append(plan_spec)
    _write_manifest("build-dataset", effective, inputs, [out_path],
                    out_path.with_name(out_path.name + ".manifest.json"))
    print(f"wrote {n} records to {out_path}")
    return 0


def _cmd_split(args, section, parser) -> int:
    input_path = _pick(args.input, section, "in")
    fractions_spec = _pick(args.fractions, section, "fractions", "0.8,0.1,0.1")
    stratify_spec = _pick(args.stratify, section, "stratify", "")
    seed = _pick(args.seed, section, "seed")
    out_dir = _pick(args.out_dir, section, "out_dir")
    if input_path is None or out_dir is None:
        parser.error("split requires --in and --out-dir")
    if seed is None:
        parser.error("split requires an explicit --seed")

    fractions = (
        _parse_fractions(fractions_spec)
        if isinstance(fractions_spec, str)
        else tuple(float(f) for f in fractions_spec)
    )
    keys = tuple(k for k in str(stratify_spec).split(",") if k) if stratify_spec else ()
    spec = SplitSpec(fractions=fractions, stratify_keys=keys, seed=int(seed))
    records = read_jsonl(input_path, kind="records")
    train, val, test = split_dataset(records, spec)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name, part in (("train", train), ("val", val), ("test", test)):
        dest = out / f"{name}.jsonl"
        write_jsonl(part, dest)
        outputs.append(dest)
    effective = {
        "in": str(input_path), "fractions": list(fractions),
        "stratify": list(keys), "seed": int(seed), "out_dir": str(out),
    }
    _write_manifest("split", effective, [input_path], outputs, out / "manifest.json")
    print(f"split {len(records)} records into {len(train)}/{len(val)}/{len(test)}")
    return 0


def _cmd_generate(args, section, parser) -> int:
    input_path = _pick(args.input, section, "in")
    endpoint = _pick(args.endpoint, section, "endpoint")
    model = _pick(args.model, section, "model")
    out = _pick(args.out, section, "out")
    for name, value in (("--in", input_path), ("--endpoint", endpoint),
                        ("--model", model), ("--out", out)):
        if value is None:
            parser.error(f"generate requires {name}")
    cfg = EndpointConfig(
        base_url=str(endpoint),
        model_name=str(model),
        max_tokens=int(_pick(args.max_tokens, section, "max_tokens", 256)),
        temperature=float(_pick(args.temperature, section, "temperature", 0.7)),
        request_timeout=float(_pick(args.timeout, section, "timeout", 30.0)),
        max_retries=int(_pick(args.max_retries, section, "max_retries", 3)),
        max_in_flight=int(_pick(args.max_in_flight, section, "max_in_flight", 4)),
    )
    cache_dir = _pick(args.cache, section, "cache")
    cache = DiskCache(cache_dir) if cache_dir else None
    out_format = _pick(args.out_format, section, "out_format", "generations")

    records = read_jsonl(input_path, kind="records")
    results = generate_batch(records, cfg, cache)
    failures = [r for r in results if not r.ok]
    for failure in failures:
        print(f"generation failed for {failure.record_id}: {failure.error}", file=sys.stderr)

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if out_format == "records":
        filled = [rec.with_response(res.text) for rec, res in zip(records, results)]
        write_jsonl(filled, out_path)
    else:
        write_jsonl([r.to_dict() for r in results], out_path)
    effective = {
        "in": str(input_path), "endpoint": str(endpoint), "model": str(model),
        "out": str(out), "out_format": out_format,
        "temperature": cfg.temperature, "max_tokens": cfg.max_tokens,
        "max_retries": cfg.max_retries, "max_in_flight": cfg.max_in_flight,
        "cache": str(cache_dir) if cache_dir else None,
    }
    _write_manifest("generate", effective, [input_path], [out_path],
                    out_path.with_name(out_path.name + ".manifest.json"))
    print(f"generated {len(results) - len(failures)}/{len(results)} responses to {out_path}")
    return 1 if failures else 0


def _cmd_evaluate(args, section, parser) -> int:
    generations_path = _pick(args.generations, section, "generations")
    references_path = _pick(args.references, section, "references")
    out = _pick(args.out, section, "out")
    for name, value in (("--generations", generations_path),
                        ("--references", references_path), ("--out", out)):
        if value is None:
            parser.error(f"evaluate requires {name}")
    bank_path = _pick(args.bank, section, "bank")
    lexicon_path = _pick(args.lexicon, section, "lexicon")

    questions = None
    if bank_path:
        bank = load_question_bank(bank_path)
        questions = {q.id: q for q in bank.questions()}
    lexicon = load_lexicon(lexicon_path) if lexicon_path else default_lexicon()
    ctx = EvalContext(provider=HashedTrigramProvider(), lexicon=lexicon, questions=questions)

    references = {r.id: r for r in read_jsonl(references_path, kind="records")}
    generations = read_jsonl(generations_path, kind="dicts")

    lines = []
    for lineno, gen in enumerate(generations, start=1):
        if "record_id" not in gen or "text" not in gen:
            raise ParseError("generation line needs record_id and text",
                             path=str(generations_path), line=lineno)
        record = references.get(gen["record_id"])
        if record is None:
            raise PolypersonaError(
                f"generation {gen['record_id']!r} has no matching reference record"
            )
        vector = evaluate_pair(record, gen["text"], record.assistant, ctx)
        lines.append({
            "record_id": record.id,
            "model": gen.get("model", "unknown"),
            "domain": record.meta.domain,
            "question_type": record.meta.question_type,
            "metrics": vector.as_dict(),
            "flags": list(vector.flags),
        })

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(lines, out_path)
    effective = {
        "generations": str(generations_path), "references": str(references_path),
        "bank": str(bank_path) if bank_path else None,
        "lexicon": str(lexicon_path) if lexicon_path else "bundled",
        "out": str(out),
    }
    inputs = [generations_path, references_path]
    if bank_path:
        inputs.append(bank_path)
    if lexicon_path:
        inputs.append(lexicon_path)
    _write_manifest("evaluate", effective, inputs, [out_path],
                    out_path.with_name(out_path.name + ".manifest.json"))
    print(f"evaluated {len(lines)} generations to {out_path}")
    return 0


def _cmd_report(args, section, parser) -> int:
    input_path = _pick(args.input, section, "in")
    out = _pick(args.out, section, "out")
    if input_path is None or out is None:
        parser.error("report requires --in and --out")
    group_spec = str(_pick(args.group, section, "group", "model"))
    fmt = _pick(args.format, section, "format", "markdown")
    best = bool(_pick(args.best_per_domain, section, "best_per_domain", False))
    criterion = _pick(args.criterion, section, "criterion", "quality")
    averaging = _pick(args.averaging, section, "averaging", "micro")

    group_keys = [k.strip() for k in group_spec.split(",") if k.strip()]
    if not set(group_keys) <= {"model", "domain"} or not group_keys:
        raise ConfigError(f"unknown group spec {group_spec!r}")

    lines = read_jsonl(input_path, kind="dicts")
    pairs = []
    need_domain = "domain" in group_keys or best or averaging == "macro"
    for obj in lines:
        vector = MetricVector(**obj["metrics"], flags=tuple(obj.get("flags", ())))
        key = [str(obj.get("model", "unknown"))]
        if need_domain:
            key.append(str(obj.get("domain", "unknown")))
        pairs.append((tuple(key), vector))

    rows = aggregate(pairs)
    if best:
        text = render_winners(best_per_domain(rows, criterion=str(criterion)), fmt)
    else:
        if need_domain and "domain" not in group_keys:
            rows = macro_average(rows)
        text = render(rows, fmt)

    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(text, encoding="utf-8")
    effective = {
        "in": str(input_path), "group": group_spec, "format": fmt, "out": str(out),
        "best_per_domain": best, "criterion": str(criterion), "averaging": str(averaging),
    }
    _write_manifest("report", effective, [input_path], [out_path],
                    out_path.with_name(out_path.name + ".manifest.json"))
    print(f"wrote report to {out_path}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        section = _section(config, args.command)
        if args.command == "validate":
            return _cmd_validate(args, section)
        if args.command == "build-dataset":
            return _cmd_build_dataset(args, section, parser)
        if args.command == "split":
            return _cmd_split(args, section, parser)
        if args.command == "generate":
            return _cmd_generate(args, section, parser)
        if args.command == "evaluate":
            return _cmd_evaluate(args, section, parser)
        if args.command == "report":
            return _cmd_report(args, section, parser)
        parser.error(f"unknown command {args.command!r}")
    except PolypersonaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def run(argv: Sequence[str] | None = None) -> int:
    """Dispatch argv and return the process exit code (2 on usage errors)
    instead of raising ``SystemExit``."""
    try:
        return main(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
