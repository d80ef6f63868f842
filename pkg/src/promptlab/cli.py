"""Command-line pipeline: gen-data, search-attrs, train, eval, ablate, report.

Each command reads one JSON run config (``--config``), applies flag
overrides (flags win), and writes versioned artifact files into the output
directory. Commands are idempotent: identical config and seed produce
byte-identical artifacts. On failure the process exits nonzero and the last
line on standard error is a single machine-parseable summary of the form
``error: <ErrorType>: <message>``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from itertools import permutations

import numpy as np

from .attributes import LlmClient, ResponseCache, describe_categories, fixture_bases, summarize_bases
from .config import RunConfig, config_hash, load_run_config, named_subseed, save_run_config
from .data import Task, make_base_novel_task
from .encoders import DualEncoder, build_config_for
from .errors import CheckpointError, ConfigError, DataError, PromptLabError
from .prompts import (
    CLASS_POSITIONS,
    DROP_POLICIES,
    INIT_SCHEMES,
    POSITION_STYLES,
    PromptLayout,
    SoftPromptBank,
)
from .search import alternating_search, describe_config, export_result, load_result
from .serialize import dump_json, expect_version, file_sha256, load_json
from .training import (
    EvalReport,
    aggregate_reports,
    evaluate,
    harmonic_mean,
    load_report_records,
    make_bank,
    per_class_accuracy,
    run_base_to_novel,
    save_report_records,
    train_prompts,
)

CHECKPOINT_KIND = "prompt_checkpoint"
CHECKPOINT_VERSION = 1
MANIFEST_KIND = "dataset_manifest"
MANIFEST_VERSION = 1
SWEEP_KIND = "ablation_sweep"
SWEEP_VERSION = 1

ABLATION_AXES = ("length", "class_position", "drop_policy", "attr_order", "attr_position", "init")


# -- plumbing --------------------------------------------------------------------


def _ensure_out(config: RunConfig) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return config.out_dir


def _path(config: RunConfig, name: str) -> str:
    return os.path.join(config.out_dir, name)


def _load_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if getattr(args, "seeds", None):
        overrides["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    return load_run_config(args.config, overrides)


def _tasks_for(config: RunConfig):
    """Base and novel halves, either loaded from files or generated on demand."""
    base_path, novel_path = _path(config, "base.json"), _path(config, "novel.json")
    if os.path.exists(base_path) and os.path.exists(novel_path):
        return Task.load(base_path), Task.load(novel_path)
    if config.dataset_path is not None:
        root, ext = os.path.splitext(config.dataset_path)
        base = Task.load(f"{root}.base{ext}")
        novel = Task.load(f"{root}.novel{ext}")
        return base, novel
    spec = replace(config.task_spec, seed=named_subseed(config.seed, "data"))
    return make_base_novel_task(spec)


def _encoder_for(config: RunConfig, vocabulary) -> DualEncoder:
    cfg = build_config_for(vocabulary, **config.encoder_overrides)
    return DualEncoder(cfg, vocabulary, seed=named_subseed(config.seed, "encoder"))


def _resolve_bases(config: RunConfig, task: Task):
    src = config.attributes
    if src.fixture is not None:
        return fixture_bases(src.fixture).bases
    if src.explicit is not None:
        return tuple(src.explicit)
    cache = ResponseCache(_path(config, "llm_cache"))
    client = LlmClient(src.llm, cache=cache)
    described = describe_categories(task.class_names, client)
    return summarize_bases(described, 5, client).bases


def _selected_attributes(config: RunConfig) -> tuple:
    """The combination a train run anchors on: explicit config wins, then search output."""
    if config.train.attributes:
        return tuple(config.train.attributes)
    result_path = _path(config, "search_result.txt")
    if os.path.exists(result_path):
        return tuple(load_result(result_path).selected)
    raise ConfigError(
        "no attributes to anchor on: set train.attributes or run search-attrs first"
    )


# -- commands -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    _ensure_out(config)
    if config.task_spec is None:
        raise ConfigError("gen-data needs an inline task spec, not a dataset path")
    spec = replace(config.task_spec, seed=named_subseed(config.seed, "data"))
    base, novel = make_base_novel_task(spec)
    entries = []
    for task, name in ((base, "base.json"), (novel, "novel.json")):
        path = _path(config, name)
        task.save(path)
        entries.append(
            {
                "file": name,
                "sha256": file_sha256(path),
                "classes": len(task.class_names),
                "splits": {k: len(y) for k, (x, y) in sorted(task.splits.items())},
            }
        )
    manifest = {
        "kind": MANIFEST_KIND,
        "format_version": MANIFEST_VERSION,
        "config_hash": config.fingerprint(),
        "seed": config.seed,
        "datasets": entries,
    }
    dump_json(manifest, _path(config, "manifest.json"))
    save_run_config(config, _path(config, "run_config.json"))
    for e in entries:
        print(f"wrote {e['file']}: {e['classes']} classes, splits {e['splits']}")
    return 0


def cmd_search_attrs(args) -> int:
    config = _load_config(args)
    _ensure_out(config)
    base, _ = _tasks_for(config)
    bases = _resolve_bases(config, base)
    encoder = _encoder_for(config, base.vocabulary)
    search_cfg = replace(config.search, seed=named_subseed(config.seed, "search"))
    result = alternating_search(
        base, bases, search_cfg, encoder,
        config_hash=config_hash(describe_config(search_cfg)),
    )
    export_result(result, _path(config, "search_result.txt"))
    print(f"pool size {len(result.candidates)} over bases: {', '.join(result.bases)}")
    print(f"selected: ({', '.join(result.selected)})")
    return 0


def _train_one(config: RunConfig, base: Task, novel: Task, seed: int, classic: bool):
    encoder = _encoder_for(config, base.vocabulary)
    attrs = () if classic else _selected_attributes(config)
    train_cfg = replace(
        config.train, attributes=attrs, seed=named_subseed(seed, "train")
    )
    bank = make_bank(train_cfg, encoder)
    bank, _ = train_prompts(base, train_cfg, bank, encoder)
    layout = train_cfg.effective_layout()
    base_acc = evaluate(encoder, bank, layout, base, "test")
    novel_acc = evaluate(encoder, bank, layout, novel, "test")
    per_class = per_class_accuracy(encoder, bank, layout, base, "test")
    per_class.update(per_class_accuracy(encoder, bank, layout, novel, "test"))
    report = EvalReport(
        base_accuracy=base_acc,
        novel_accuracy=novel_acc,
        harmonic_mean=harmonic_mean(base_acc, novel_acc),
        per_class_accuracy=per_class,
    ).validate()
    return report, bank, train_cfg


def cmd_train(args) -> int:
    config = _load_config(args)
    _ensure_out(config)
    base, novel = _tasks_for(config)
    classic = bool(getattr(args, "classic", False))
    tag = "classic" if classic else "atprompt"
    records = []
    for seed in config.seed_list():
        report, bank, train_cfg = _train_one(config, base, novel, seed, classic)
        checkpoint = {
            "kind": CHECKPOINT_KIND,
            "format_version": CHECKPOINT_VERSION,
            "config_hash": config.fingerprint(),
            "tag": tag,
            "seed": seed,
            "attributes": list(train_cfg.attributes),
            "layout": train_cfg.effective_layout().to_dict(),
            "bank": bank.to_dict(),
        }
        dump_json(checkpoint, _path(config, f"checkpoint_{tag}_s{seed}.json"))
        records.append({"config_hash": config.fingerprint(), "seed": seed, "report": report})
    aggregate = aggregate_reports([r["report"] for r in records])
    records.append({"config_hash": config.fingerprint(), "seed": -1, "report": aggregate})
    save_report_records(records, _path(config, f"report_{tag}.json"))
    print(
        f"{tag}: base {aggregate.base_accuracy:.2f} novel {aggregate.novel_accuracy:.2f} "
        f"hm {aggregate.harmonic_mean:.2f} over {aggregate.seeds_aggregated} seed(s)"
    )
    return 0


def _load_checkpoint(config: RunConfig, tag: str, seed: int):
    path = _path(config, f"checkpoint_{tag}_s{seed}.json")
    if not os.path.exists(path):
        raise CheckpointError(f"no checkpoint at {path}; run train first")
    payload = load_json(path)
    expect_version(payload, CHECKPOINT_KIND, CHECKPOINT_VERSION, path)
    return (
        SoftPromptBank.from_dict(payload["bank"]),
        PromptLayout.from_dict(payload["layout"]),
        payload,
    )


def cmd_eval(args) -> int:
    config = _load_config(args)
    _ensure_out(config)
    base, novel = _tasks_for(config)
    classic = bool(getattr(args, "classic", False))
    tag = "classic" if classic else "atprompt"
    records = []
    for seed in config.seed_list():
        bank, layout, _ = _load_checkpoint(config, tag, seed)
        encoder = _encoder_for(config, base.vocabulary)
        base_acc = evaluate(encoder, bank, layout, base, "test")
        novel_acc = evaluate(encoder, bank, layout, novel, "test")
        per_class = per_class_accuracy(encoder, bank, layout, base, "test")
        per_class.update(per_class_accuracy(encoder, bank, layout, novel, "test"))
        report = EvalReport(
            base_accuracy=base_acc,
            novel_accuracy=novel_acc,
            harmonic_mean=harmonic_mean(base_acc, novel_acc),
            per_class_accuracy=per_class,
        ).validate()
        records.append({"config_hash": config.fingerprint(), "seed": seed, "report": report})
        print(f"seed {seed}: base {base_acc:.2f} novel {novel_acc:.2f} hm {report.harmonic_mean:.2f}")
    aggregate = aggregate_reports([r["report"] for r in records])
    records.append({"config_hash": config.fingerprint(), "seed": -1, "report": aggregate})
    save_report_records(records, _path(config, f"eval_report_{tag}.json"))
    return 0


def _ablation_cells(config: RunConfig, axis: str):
    base_layout = config.layout
    if axis == "length":
        for n in (1, 2, 4):
            yield f"soft_len={n}", replace(config.train, soft_len=n, attr_soft_len=n)
    elif axis == "class_position":
        for pos in CLASS_POSITIONS:
            yield pos, replace(config.train, layout=replace(base_layout, class_token_position=pos))
    elif axis == "drop_policy":
        for policy in DROP_POLICIES:
            yield policy, replace(
                config.train, layout=replace(base_layout, drop_policy=policy, depth=2)
            )
    elif axis == "attr_order":
        attrs = _selected_attributes(config)
        if len(attrs) < 2:
            raise ConfigError(f"attr_order needs >= 2 anchored attributes, got {attrs}")
        for order in permutations(attrs):
            yield ", ".join(order), replace(config.train, attributes=order)
    elif axis == "attr_position":
        for style in POSITION_STYLES:
            yield style, replace(
                config.train, layout=replace(base_layout, attribute_position_style=style)
            )
    elif axis == "init":
        for scheme in INIT_SCHEMES:
            yield scheme, replace(config.train, init_scheme=scheme)
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; axes: {', '.join(ABLATION_AXES)}")


def cmd_ablate(args) -> int:
    config = _load_config(args)
    _ensure_out(config)
    base, novel = _tasks_for(config)
    default_attrs = _selected_attributes(config) if args.axis != "attr_order" else ()
    rows = []
    for label, train_cfg in _ablation_cells(config, args.axis):
        if args.axis != "attr_order" and not train_cfg.attributes:
            train_cfg = replace(train_cfg, attributes=default_attrs)
        reports = []
        for seed in config.seed_list():
            encoder = _encoder_for(config, base.vocabulary)
            cell_cfg = replace(train_cfg, seed=named_subseed(seed, "train"))
            reports.append(run_base_to_novel(base, novel, cell_cfg, encoder))
        agg = aggregate_reports(reports)
        rows.append(
            {
                "cell": label,
                "base": agg.base_accuracy,
                "novel": agg.novel_accuracy,
                "hm": agg.harmonic_mean,
                "seeds": agg.seeds_aggregated,
            }
        )
    rows.sort(key=lambda r: -r["hm"])
    sweep = {
        "kind": SWEEP_KIND,
        "format_version": SWEEP_VERSION,
        "axis": args.axis,
        "config_hash": config.fingerprint(),
        "rows": rows,
    }
    dump_json(sweep, _path(config, f"ablate_{args.axis}.json"))
    print(f"{'cell':<24} {'base':>7} {'novel':>7} {'hm':>7}")
    for r in rows:
        print(f"{r['cell']:<24} {r['base']:>7.2f} {r['novel']:>7.2f} {r['hm']:>7.2f}")
    return 0


def cmd_report(args) -> int:
    config = _load_config(args)
    out = config.out_dir
    if not os.path.isdir(out):
        raise DataError(f"no output directory {out}")
    print(f"{'run':<12} {'base':>7} {'novel':>7} {'hm':>7} {'seeds':>6}")
    found = False
    for tag in ("atprompt", "classic"):
        for prefix in ("report", "eval_report"):
            path = os.path.join(out, f"{prefix}_{tag}.json")
            if not os.path.exists(path):
                continue
            found = True
            records = load_report_records(path)
            agg = next((r["report"] for r in records if r["seed"] == -1), records[-1]["report"])
            name = tag if prefix == "report" else f"{tag} (eval)"
            print(
                f"{name:<12} {agg.base_accuracy:>7.2f} {agg.novel_accuracy:>7.2f} "
                f"{agg.harmonic_mean:>7.2f} {agg.seeds_aggregated:>6}"
            )
    if not found:
        raise DataError(f"no report files under {out}")
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="promptlab",
        description="attribute-anchored prompt learning pipeline on a miniature dual encoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--seeds", default=None, help="comma-separated seed list override")

    p = sub.add_parser("gen-data", help="generate the base/novel dataset files")
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("search-attrs", help="run differentiable attribute search")
    common(p)
    p.set_defaults(func=cmd_search_attrs)

    p = sub.add_parser("train", help="train prompts on base classes and report base/novel")
    common(p)
    p.add_argument("--classic", action="store_true", help="train the no-attribute baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate saved checkpoints")
    common(p)
    p.add_argument("--classic", action="store_true", help="evaluate the baseline checkpoints")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one design axis and compare by harmonic mean")
    common(p)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="print the stored evaluation summaries")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PromptLabError as exc:
        print(f"error: {type(exc).__name__}: {str(exc) or exc!r}".replace("\n", " "),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}".replace("\n", " "), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
