"""Single `condec` entry point wiring the toolkit into batch pipelines.

Exit codes: 0 success, 1 usage error, 2 data error, 3 service error.
File outputs start with a {"_config": ...} header record so every run is
reproducible from its artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter

from . import clients, dataset, losskernel, negatives
from .evaluation import aggregate, evaluate_tree
from .prooftree import ProofError, build_tree, parse_proof, serialize_step
from .dataset import RecordError


class UsageError(Exception):
    pass


class ServiceConfigError(Exception):
    pass


def _write_records(path, config: dict, records) -> None:
    def dump(fh):
        fh.write(json.dumps({"_config": config}) + "\n")
        for record in records:
            fh.write(json.dumps(record) + "\n")

    if path in (None, "-"):
        dump(sys.stdout)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            dump(fh)


def _read_records(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def _load(args) -> dataset.LoadResult:
    return dataset.load_entailmentbank(args.input, args.task,
                                       tolerant=getattr(args, "tolerant", False))


def _endpoint(url, role, timeout, retries):
    if url:
        return clients.ServiceEndpoint(url, role, timeout=timeout, retries=retries)
    return clients.ServiceEndpoint.from_env(role, timeout=timeout, retries=retries)


def cmd_parse(args) -> int:
    if args.proof is not None:
        text = args.proof
    elif args.file:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = sys.stdin.read()
    steps = parse_proof(text)
    out = [
        {
            "premises": [str(p) for p in s.premises],
            "conclusion": str(s.conclusion),
            "conclusion_text": s.conclusion_text,
        }
        for s in steps
    ]
    print(json.dumps(out, indent=2 if args.pretty else None))
    return 0


def cmd_validate(args) -> int:
    result = _load(args)
    summary = {
        "instances": len(result.instances),
        "diagnostics": result.diagnostics,
    }
    print(json.dumps(summary, indent=2 if args.pretty else None))
    return 0


def cmd_make_stepwise(args) -> int:
    result = _load(args)
    records = [
        dataset.sample_to_record(sample)
        for instance in result
        for sample in dataset.extract_stepwise_samples(instance, args.strategy)
    ]
    config = {"subcommand": "make-stepwise", "input": args.input, "task": args.task,
              "strategy": args.strategy}
    _write_records(args.output, config, records)
    print(f"wrote {len(records)} stepwise samples", file=sys.stderr)
    return 0


def cmd_export_reasoner_pairs(args) -> int:
    result = _load(args)
    pairs = negatives.export_reasoner_pairs(result.instances)
    config = {"subcommand": "export-reasoner-pairs", "input": args.input,
              "task": args.task}
    _write_records(args.output, config, ({"input": s, "target": t} for s, t in pairs))
    print(f"wrote {len(pairs)} reasoner pairs", file=sys.stderr)
    return 0


def cmd_make_negatives(args) -> int:
    kinds = {"vanilla": ("vanilla",), "enhanced": ("enhanced",),
             "both": ("vanilla", "enhanced")}[args.mode]
    reasoner = checker = None
    if "enhanced" in kinds:
        gen_ep = _endpoint(args.generator_url, "reasoner", args.timeout, args.retries)
        chk_ep = _endpoint(args.checker_url, "checker", args.timeout, args.retries)
        if gen_ep is None or chk_ep is None:
            raise ServiceConfigError(
                "enhanced negatives need a reasoner and a checker: pass "
                "--generator-url/--checker-url or set "
                f"{clients.ENV_GENERATOR_URL}/{clients.ENV_CHECKER_URL}")
        reasoner = clients.HttpGenerator(gen_ep)
        checker = clients.HttpChecker(chk_ep)
    result = _load(args)
    config = negatives.NegativesConfig(
        kinds=kinds, selector=args.selector, threshold=args.threshold,
        seed=args.seed, parallelism=args.parallelism)
    corpus, stats = negatives.build_negative_corpus(
        result.instances, config, reasoner=reasoner, checker=checker)
    echo = {"subcommand": "make-negatives", "input": args.input, "task": args.task,
            "mode": args.mode, "selector": args.selector,
            "threshold": args.threshold, "seed": args.seed,
            "parallelism": args.parallelism}
    records = [neg.to_record() for neg in corpus]
    records.append(stats.to_record())
    _write_records(args.output, echo, records)
    print(f"retained {len(corpus)} negatives", file=sys.stderr)
    return 0


def cmd_loss_check(args) -> int:
    batch = losskernel.load_batch(args.batch)
    cfg = losskernel.LossConfig(tau=args.tau, alpha=args.alpha, sim_kind=args.sim)
    err = losskernel.grad_check(batch, cfg, epsilon=args.epsilon)
    print(json.dumps({"max_relative_error": err, "bound": args.bound,
                      "passed": err < args.bound}))
    return 0 if err < args.bound else 2


def cmd_evaluate(args) -> int:
    gold = dataset.load_entailmentbank(args.gold, args.task, tolerant=False)
    by_id = {inst.id: inst for inst in gold.instances}
    if args.scorer == "builtin":
        scorer = clients.builtin_similarity
    else:
        endpoint = _endpoint(args.scorer_url, "scorer", args.timeout, args.retries)
        if endpoint is None:
            raise ServiceConfigError(
                f"remote scorer needs --scorer-url or {clients.ENV_SCORER_URL}")
        scorer = lambda a, b: clients.text_similarity(endpoint, a, b)

    reports = []
    per_tree = []
    for record in _read_records(args.pred):
        if any(k.startswith("_") for k in record):
            continue
        instance = by_id.get(str(record["id"]))
        if instance is None:
            raise RecordError(0, f"prediction id {record['id']!r} not in gold file")
        steps = parse_proof(record["proof"]) if record["proof"].strip() else []
        pred = build_tree(instance.hypothesis, instance.context, steps, mode="lenient")
        report = evaluate_tree(pred, instance.gold_tree, scorer, args.threshold)
        reports.append(report)
        per_tree.append({"id": instance.id, **report.to_record()})
    if not reports:
        raise RecordError(0, "no predictions to evaluate")
    summary = aggregate(reports)
    config = {"subcommand": "evaluate", "pred": args.pred, "gold": args.gold,
              "task": args.task, "scorer": args.scorer, "threshold": args.threshold,
              "trees": len(reports)}
    records = per_tree if args.per_tree else []
    records.append({"summary": summary.to_record(),
                    "summary_pct": summary.as_percentages()})
    _write_records(args.output, config, records)
    return 0


def cmd_infer(args) -> int:
    endpoint = _endpoint(args.generator_url, "generator", args.timeout, args.retries)
    if endpoint is None:
        raise ServiceConfigError(
            f"infer needs --generator-url or {clients.ENV_GENERATOR_URL}")
    generator = clients.HttpGenerator(endpoint)
    result = _load(args)
    records = []
    for instance in result:
        tree, trace = clients.run_stepwise_inference(instance, generator,
                                                     max_steps=args.max_steps)
        records.append({
            "id": instance.id,
            "proof": " ".join(serialize_step(s) + ";" for s in tree.steps),
            "diagnostics": [str(d) for d in tree.diagnostics],
            "generations": trace.generations,
        })
    config = {"subcommand": "infer", "input": args.input, "task": args.task,
              "max_steps": args.max_steps, "generator_url": endpoint.base_url}
    _write_records(args.output, config, records)
    return 0


def cmd_stats(args) -> int:
    retained = Counter()
    embedded = None
    for record in _read_records(args.corpus):
        if "_config" in record:
            continue
        if record.get("_stats"):
            embedded = record
            continue
        retained[record["kind"]] += 1
    out = {"retained_by_kind": dict(sorted(retained.items()))}
    if embedded is not None:
        out["candidates"] = embedded.get("candidates", {})
        out["retained"] = embedded.get("retained", {})
        out["errors"] = embedded.get("errors", [])
    print(json.dumps(out, indent=2 if args.pretty else None))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condec",
                                     description="entailment-tree proof toolkit")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_io(p, output=True):
        p.add_argument("--input", required=True, help="line-delimited tree file")
        p.add_argument("--task", type=int, choices=(1, 2, 3), default=2)
        p.add_argument("--tolerant", action="store_true",
                       help="skip bad lines instead of aborting")
        if output:
            p.add_argument("--output", default="-", help="output path, - for stdout")

    def add_service(p):
        p.add_argument("--timeout", type=float, default=30.0)
        p.add_argument("--retries", type=int, default=2)

    p = sub.add_parser("parse", help="parse a proof DSL string")
    p.add_argument("proof", nargs="?", help="proof string; omit to read stdin")
    p.add_argument("--file", help="read the proof from a file")
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("validate", help="load and validate a tree file")
    add_io(p, output=False)
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("make-stepwise", help="extract stepwise training samples")
    add_io(p)
    p.add_argument("--strategy", choices=("per-step", "full-tree"), default="per-step")
    p.set_defaults(func=cmd_make_stepwise)

    p = sub.add_parser("export-reasoner-pairs",
                       help="export reasoner training pairs from gold steps")
    add_io(p)
    p.set_defaults(func=cmd_export_reasoner_pairs)

    p = sub.add_parser("make-negatives", help="build a hard-negative corpus")
    add_io(p)
    p.add_argument("--mode", choices=("vanilla", "enhanced", "both"), default="vanilla")
    p.add_argument("--selector", choices=("random", "bm25"), default="random")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--generator-url")
    p.add_argument("--checker-url")
    add_service(p)
    p.set_defaults(func=cmd_make_negatives)

    p = sub.add_parser("loss-check", help="finite-difference gradient check")
    p.add_argument("--batch", required=True, help=".bin or .json hidden-batch file")
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--sim", choices=("dot", "cosine"), default="dot")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--bound", type=float, default=1e-4)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("evaluate", help="score predicted trees against gold")
    p.add_argument("--pred", required=True, help="predictions: {id, proof} records")
    p.add_argument("--gold", required=True, help="gold tree file")
    p.add_argument("--task", type=int, choices=(1, 2, 3), default=2)
    p.add_argument("--scorer", choices=("builtin", "remote"), default="builtin")
    p.add_argument("--scorer-url")
    p.add_argument("--threshold", type=float, default=0.28)
    p.add_argument("--per-tree", action="store_true")
    p.add_argument("--output", default="-")
    add_service(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("infer", help="run stepwise inference through a generator")
    add_io(p)
    p.add_argument("--generator-url")
    p.add_argument("--max-steps", type=int, default=20)
    add_service(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stats", help="summarize a negative corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pretty", action="store_true")
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except ServiceConfigError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 3
    except clients.ClientError as exc:
        print(f"service error: {exc}", file=sys.stderr)
        return 3
    except (ProofError, RecordError, json.JSONDecodeError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
