"""Command-line entry point: ``fame <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .pipeline import SetupError, SetupResult, load_corpus, prepare, propose, run_setup

logger = logging.getLogger("fame")


class CommandError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "input", None):
        cfg.data.path = str(args.input)
    if getattr(args, "format", None):
        cfg.data.format = args.format
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    return cfg


def _out(args, cfg: PipelineConfig) -> Path:
    return Path(args.out or cfg.output_dir)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    from .synthetic import SyntheticConfig, generate

    out = Path(args.out or "synthetic.log")
    out.parent.mkdir(parents=True, exist_ok=True)
    cfg = SyntheticConfig(
        n=args.n,
        domains=args.domains,
        mixed_templates=0 if args.closed_world else args.mixed_templates,
        anomaly_rate=args.anomaly_rate,
        novel_templates=args.novel_templates,
        seed=args.seed if args.seed is not None else 0,
    )
    corpus, truth = generate(cfg).write(out)
    print(json.dumps({"corpus": str(corpus), "truth": str(truth), "lines": cfg.n}))
    return 0


def cmd_parse(args) -> int:
    cfg = _config(args)
    corpus = load_corpus(cfg)
    split, offline, table, _, _ = prepare(cfg, corpus)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    table.save(out / "templates.json")
    rows = ["ordinal,event_id"] + [f"{o},{e}" for o, e in zip(offline.ordinals.tolist(), offline.event_ids)]
    _write(out / "event_ids.csv", "\n".join(rows))
    print(json.dumps({"offline_lines": len(offline), "templates": len(table), "out": str(out)}))
    return 0


def cmd_sample(args) -> int:
    from .kshot import format_cost_table, labeling_cost_report

    cfg = _config(args)
    corpus = load_corpus(cfg)
    _, offline, _, ks, pool = prepare(cfg, corpus)
    out = _out(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    ks.save(out / "kshot.json", offline)
    cost = labeling_cost_report(offline, sorted({cfg.k, *args.cost_ks}))
    _write(out / "cost.csv", "k,labels,offline_lines,reduction\n" + "\n".join(
        f"{r.k},{r.labels},{r.offline_lines},{r.reduction:.6f}" for r in cost))
    print(format_cost_table(cost))
    print(json.dumps({"k": cfg.k, "labels": ks.n_labels, "pu_pool": int(len(pool)), "out": str(out)}))
    return 0


def cmd_partition(args) -> int:
    from .partition import certify, export_prompt_payload

    cfg = _config(args)
    if args.action == "import":
        if not args.partition:
            raise CommandError("partition", "import needs --partition FILE")
        cfg.partition.mode = "import"
        cfg.partition.path = str(args.partition)
    elif args.action == "tfidf":
        cfg.partition.mode = "tfidf"
    corpus = load_corpus(cfg)
    _, offline, table, ks, pool = prepare(cfg, corpus)
    out = _out(args, cfg)
    if args.action == "export-prompt":
        payload = export_prompt_payload(table, ks, offline)
        path = _write(out / "prompt_payload.json", json.dumps(payload, indent=1))
        print(json.dumps({"event_ids": len(payload["event_stats"]), "out": str(path)}))
        return 0
    try:
        proposal = propose(cfg, table, ks)
    except Exception as exc:
        raise CommandError("partition", str(exc)) from exc
    p = cfg.partition
    cert = certify(proposal, ks, pool, offline, table, p.distinctness_threshold, p.pool_sample, cfg.stage_seed("certify"))
    _write(out / "proposal.json", proposal.to_json())
    _write(out / "certified.json", cert.to_json())
    print(json.dumps({"domains": list(cert.domain_names), "rho": list(cert.rho), "out": str(out)}))
    return 0


def cmd_setup(args) -> int:
    cfg = _config(args)
    if args.partition:
        cfg.partition.mode = "import"
        cfg.partition.path = str(args.partition)
    out = _out(args, cfg)
    res = run_setup(cfg, out_dir=out, jobs=args.jobs)
    print(json.dumps({"bundle": str(res.bundle_dir), "domains": list(res.bundle.partition.domain_names),
                      "rho": list(res.bundle.partition.rho)}))
    return 0


def _iter_input(path: Path, fmt: str):
    from .corpus import iter_records

    with path.open("r", encoding="utf-8", errors="replace") as fh:
        if fmt == "raw":
            for i, line in enumerate(fh):
                line = line.rstrip("\r\n")
                if line.strip():
                    yield i, line
        else:
            for ordinal, _, raw in iter_records(fh, fmt):
                yield ordinal, raw


def cmd_infer(args) -> int:
    from .inference import ModelBundle, classify_stream

    bundle = ModelBundle.load(args.bundle)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:

        def sink(v):
            fh.write(v.to_json() + "\n")

        try:
            summary = classify_stream(bundle, _iter_input(Path(args.input), args.format), sink, args.batch_size, args.jobs)
        finally:
            fh.flush()
    print(json.dumps(summary, indent=1))
    return 0


def _setup_for_eval(args, cfg) -> SetupResult:
    if not args.bundle:
        return run_setup(cfg)
    from .inference import ModelBundle

    bundle = ModelBundle.load(args.bundle)
    corpus = load_corpus(cfg)
    split, offline, table, ks, pool = prepare(cfg, corpus)
    return SetupResult(cfg, corpus, split, offline, table, ks, pool, None, bundle)


def cmd_eval(args) -> int:
    from . import plots
    from .evaluation import (
        domain_mapping,
        eval_report,
        evaluate,
        label_agreement,
        render_table,
        rows_to_csv,
        run_baselines,
        to_json,
    )

    cfg = _config(args)
    out = _out(args, cfg)
    setup = _setup_for_eval(args, cfg)
    metrics, result = evaluate(setup.bundle, setup.test)
    baselines = {} if args.no_baselines else run_baselines(setup)
    report = eval_report(setup, metrics, result, baselines)
    if args.truth:
        from .synthetic import load_truth

        truth = load_truth(args.truth)
        by_ord = {t["ordinal"]: t["domain"] for t in truth}
        off_dom = [by_ord.get(o) for o in setup.offline.ordinals.tolist()]
        test_dom = [by_ord.get(o) for o in setup.test.ordinals.tolist()]
        mapping = domain_mapping(setup.offline, setup.bundle, off_dom)
        report["domain_labels"] = {
            "mapping": {setup.bundle.partition.domain_names[d]: t for d, t in sorted(mapping.items())},
            **label_agreement(result, test_dom, mapping),
        }
    _write(out / "eval.json", to_json(report))
    _write(out / "eval.csv", rows_to_csv(report["table"], ["method", "precision", "recall", "f1", "auroc"]))
    table = render_table(report["table"])
    notes = [f"  {n}: {b.info['note']}" for n, b in baselines.items()]
    _write(out / "eval.txt", table + ("\n\nbaselines:\n" + "\n".join(notes) if notes else ""))
    plots.plot_method_comparison(report["table"], out / "method_comparison.png")
    names = ("universal", "pure", "mixed")
    plots.plot_score_distributions(result.score, setup.test.labels, result.path, names, out / "score_distributions.png")
    print(table)
    return 0


def cmd_sweep(args) -> int:
    from . import plots
    from .evaluation import k_sweep, rows_to_csv, to_json

    cfg = _config(args)
    out = _out(args, cfg)
    corpus = load_corpus(cfg)
    seeds = args.seeds if args.seeds else [cfg.seed]
    doc = k_sweep(corpus, cfg, args.ks, seeds, baselines=args.baselines)
    _write(out / "sweep.json", to_json(doc))
    _write(out / "sweep.csv", rows_to_csv(doc["summary"]))
    _write(out / "sweep_cells.csv", rows_to_csv(doc["cells"]))
    _write(out / "cost.csv", rows_to_csv(doc["cost"]))
    plots.plot_k_sweep(doc["summary"], out / "k_sweep.png")
    plots.plot_labeling_cost(doc["cost"], out / "labeling_cost.png")
    for row in doc["summary"]:
        f1 = row["f1_mean"]
        std = row["f1_std"]
        print(f"K={row['k']:<5} labels={row['labels']:<8} F1={'n/a' if f1 is None else f'{100 * f1:.2f}'}"
              f"{'' if std is None else f' ± {100 * std:.2f}'}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", type=Path, help="dataset path (overrides data.path)")
    data.add_argument("--format", choices=("loghub_labeled", "jsonl"), help="dataset format")
    data.add_argument("--k", type=int, help="labels per EventID (default 100)")

    ap = argparse.ArgumentParser(prog="fame", description="Failure-aware mixture-of-experts log anomaly detection.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a seeded synthetic corpus and truth sidecar")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--domains", type=int, default=3)
    p.add_argument("--mixed-templates", type=int, default=5)
    p.add_argument("--anomaly-rate", type=float, default=0.05)
    p.add_argument("--novel-templates", type=int, default=0)
    p.add_argument("--closed-world", action="store_true", help="no mixed templates")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("parse", parents=[common, data], help="parse the offline region into a template table")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("sample", parents=[common, data], help="draw the K-shot sample and report labeling cost")
    p.add_argument("--cost-ks", type=_int_list, default=[5, 10, 25, 50, 100, 200])
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("partition", parents=[common, data], help="export a grouping prompt, import or derive a partition")
    p.add_argument("action", choices=("export-prompt", "import", "tfidf"))
    p.add_argument("--partition", type=Path, help="partition JSON for 'import'")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("setup", parents=[common, data], help="run the offline stage and write a model bundle")
    p.add_argument("--partition", type=Path, help="import this partition instead of TF-IDF grouping")
    p.add_argument("--jobs", type=int, default=1, help="experts trained in parallel")
    p.set_defaults(func=cmd_setup)

    p = sub.add_parser("infer", parents=[common], help="classify a log stream with a bundle")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--format", choices=("raw", "loghub_labeled", "jsonl"), default="raw")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=2048)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common, data], help="evaluate on the test split against the baselines")
    p.add_argument("--bundle", type=Path, help="evaluate this bundle instead of running setup")
    p.add_argument("--truth", type=Path, help="synthetic truth sidecar for domain-label agreement")
    p.add_argument("--no-baselines", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, data], help="K sweep over seeds")
    p.add_argument("--ks", type=_int_list, default=[5, 10, 25, 50, 100])
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--baselines", action="store_true", help="also record baseline F1 per cell")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (SetupError, CommandError) as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error [config] {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
