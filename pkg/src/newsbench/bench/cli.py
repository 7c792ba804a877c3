"""`newsbench` command line.

    newsbench verify --train-dir MINDsmall_train --dev-dir MINDsmall_dev
    newsbench grid --config experiment.yaml
    newsbench leaderboard --inject-reference-table

Every subcommand exits 0 only when all requested work succeeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from ..data import make_ctr_samples, make_matching_samples, write_samples
from ..metrics import score_prediction_file
from ..training import build_plm_table, encode_once, load_pretrained, pretrain_content_encoder, save_pretrained
from ..green import EmissionLedger, get_intensity, get_profile
from ..zoo import EmbeddingTable
from .config import ENV_PATHS, ConfigError, config_from_dict
from .leaderboard import LeaderboardError, render_leaderboard
from .reference import reference_results
from .runner import prepare_data, run_experiment, verify_dataset
from .store import persist_many, read_store

logger = logging.getLogger("newsbench")

# CLI flag -> (config section, key)
_OVERRIDES = {
    "train_dir": ("dataset", "train_dir"),
    "dev_dir": ("dataset", "dev_dir"),
    "dataset_name": ("dataset", "name"),
    "split_seed": ("dataset", "split_seed"),
    "split_method": ("dataset", "split_method"),
    "learning_rate": ("train", "learning_rate"),
    "batch_size": ("train", "batch_size"),
    "max_epochs": ("train", "max_epochs"),
    "patience": ("train", "patience"),
    "k_neg": ("train", "k_neg"),
    "l_max": ("train", "l_max"),
    "seeds": (None, "seeds"),
    "variants": (None, "variants"),
    "hardware_profile": (None, "hardware_profile"),
    "carbon_intensity": (None, "carbon_intensity"),
    "output_dir": (None, "output_dir"),
    "embed_dim": (None, "embed_dim"),
    "shard_format": (None, "shard_format"),
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON experiment config")
    p.add_argument("--synthetic", action="store_true", help="use the built-in synthetic corpus")
    p.add_argument("--train-dir")
    p.add_argument("--dev-dir")
    p.add_argument("--dataset-name")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--split-method", choices=("random", "temporal"))
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--k-neg", type=int)
    p.add_argument("--l-max", type=int)
    p.add_argument("--seeds", type=lambda s: [int(x) for x in s.split(",")], help="comma separated, e.g. 0,1,2")
    p.add_argument("--variants", nargs="+", help="BASE-KIND names, or `all`")
    p.add_argument("--hardware-profile")
    p.add_argument("--carbon-intensity")
    p.add_argument("--total-emissions", action="store_true", help="count every phase, not just training")
    p.add_argument("--output-dir")
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--shard-format", choices=("ndjson", "binary"))


def build_config(args):
    raw = {}
    if args.config:
        import yaml

        raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
    if getattr(args, "synthetic", False):
        raw.setdefault("dataset", {}).setdefault("synthetic", {})
        raw["dataset"].setdefault("name", "synthetic")
    for flag, (section, key) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "variants" and value == ["all"]:
            value = "all"
        target = raw.setdefault(section, {}) if section else raw
        target[key] = value
    if getattr(args, "total_emissions", False):
        raw["emissions"] = "total"
    return config_from_dict(raw)


def cmd_prepare(args) -> int:
    cfg = build_config(args)
    data = prepare_data(cfg)
    out = Path(cfg.output_dir) / "shards"
    out.mkdir(parents=True, exist_ok=True)
    ext = "jsonl" if cfg.shard_format == "ndjson" else "bin"
    n_match = write_samples(make_matching_samples(data.train, cfg.train.k_neg, cfg.train.l_max, cfg.train.seed),
                            out / f"train.matching.{ext}", cfg.shard_format)
    n_ctr = write_samples(make_ctr_samples(data.train, cfg.train.l_max), out / f"train.ctr.{ext}", cfg.shard_format)
    data.vocab.save(out / "vocab.json")
    print(data.stats.format())
    print(f"wrote {n_match} matching and {n_ctr} CTR samples to {out}")
    return 0


def cmd_verify(args) -> int:
    train_dir = os.environ.get(ENV_PATHS["train_dir"]) or args.train_dir
    dev_dir = os.environ.get(ENV_PATHS["dev_dir"]) or args.dev_dir
    if not (train_dir and dev_dir):
        print("verify needs --train-dir and --dev-dir", file=sys.stderr)
        return 2
    report = verify_dataset(train_dir, dev_dir, args.dataset_name)
    return 1 if report.passed is False else 0


def _ledger(cfg) -> EmissionLedger:
    return EmissionLedger(get_profile(cfg.hardware_profile), get_intensity(cfg.carbon_intensity))


def cmd_pretrain(args) -> int:
    cfg = build_config(args)
    data = prepare_data(cfg)
    ledger = _ledger(cfg)
    encoder = pretrain_content_encoder(data.article_list(), cfg.pretrain, ledger)
    path = save_pretrained(encoder, args.out or Path(cfg.output_dir) / "pretrained_encoder.pt")
    print(f"pretrained for {len(encoder.losses)} epochs, final loss {encoder.losses[-1]:.4f}; "
          f"{ledger.total():.4g} g CO2E; saved to {path}")
    return 0


def cmd_encode(args) -> int:
    cfg = build_config(args)
    data = prepare_data(cfg)
    ledger = _ledger(cfg)
    articles = data.article_list()
    if args.encoder:
        table = encode_once(load_pretrained(args.encoder), articles, ledger)
    else:
        table = build_plm_table(articles, cfg.plm, ledger)
    default = "prec_table.nemb" if args.encoder else "plm_table.nemb"
    path = Path(args.out or Path(cfg.output_dir) / default)
    path.parent.mkdir(parents=True, exist_ok=True)
    table.save(path)
    print(f"encoded {len(table.news_ids)} articles ({table.provenance}, d={table.d}) to {path}")
    return 0


def _run(cfg, args, tables=None) -> int:
    outcome = run_experiment(cfg, checkpoint_dir=getattr(args, "checkpoint_dir", None), tables=tables)
    for r in outcome.results:
        print(f"{r.spec.name}: AUC {r.mean['auc']:.2f} MRR {r.mean['mrr']:.2f} nDCG@5 {r.mean['ndcg5']:.2f} "
              f"CO2E {r.co2e(cfg.emissions):.4g} g")
    print(outcome.summary())
    return 0 if outcome.ok else 1


def cmd_train(args) -> int:
    cfg = build_config(args)
    if len(cfg.variants) != 1:
        print("train runs exactly one variant; use `grid` for several", file=sys.stderr)
        return 2
    tables = None
    if args.table:
        table = EmbeddingTable.load(args.table)
        kind = cfg.variants[0].variant_kind
        tables = {kind: table}
    return _run(cfg, args, tables)


def cmd_grid(args) -> int:
    return _run(build_config(args), args)


def cmd_leaderboard(args) -> int:
    mode = "total" if args.total_emissions else "train_only"
    results = list(read_store(args.store).values()) if args.store else []
    if args.inject_reference_table:
        results += reference_results()
        if args.store:
            persist_many(reference_results(), args.store)
    try:
        text = render_leaderboard(mode=mode, results=results, markup=args.markup)
    except LeaderboardError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_score(args) -> int:
    report = score_prediction_file(args.predictions, args.behaviors)
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="newsbench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse, split and cache training samples")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("verify", help="recompute dataset statistics")
    p.add_argument("--train-dir")
    p.add_argument("--dev-dir")
    p.add_argument("--dataset-name", help="MIND-small or MIND-large; guessed from paths otherwise")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pretrain", help="pretrain the content encoder for PREC")
    _add_experiment_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("encode", help="encode every article once into a lookup table")
    _add_experiment_flags(p)
    p.add_argument("--encoder", help="pretrained encoder file; omit to cache raw PLM vectors")
    p.add_argument("--out")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train and evaluate one variant")
    _add_experiment_flags(p)
    p.add_argument("--table", help="prebuilt lookup table for an OLEO variant (not part of the config hash)")
    p.add_argument("--checkpoint-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="run every selected variant")
    _add_experiment_flags(p)
    p.add_argument("--checkpoint-dir")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("leaderboard", help="render a results store")
    p.add_argument("--store", help="results.ndjson")
    p.add_argument("--inject-reference-table", action="store_true",
                   help="add the published reference numbers as results")
    p.add_argument("--total-emissions", action="store_true")
    p.add_argument("--markup", choices=("markdown", "plain"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_leaderboard)

    p = sub.add_parser("score", help="score a prediction file against a behaviors file")
    p.add_argument("predictions")
    p.add_argument("behaviors")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
