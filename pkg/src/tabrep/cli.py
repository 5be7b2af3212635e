"""Command line front end.

Subcommands:

    preprocess  raw JSONL corpus -> processed splits + vocabularies
    pretrain    processed splits -> pre-trained checkpoint + metrics log
    finetune    checkpoint + side files -> task checkpoint
    evaluate    task checkpoint (or baseline) -> report JSON
    ablate      grid over visibility and cell-mask ratio -> recovery log

Exit codes: 0 success, 1 runtime failure (bad files, bad config), 2 usage.
The run seed resolves as --seed, then the TABREP_SEED environment variable,
then the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .baselines import CorpusIndex
from .corpus import (
    ENTITY_RESERVED,
    TOKEN_RESERVED,
    Vocab,
    WordTokenizer,
    build_vocabs,
    index_table,
    load_processed,
    load_raw_tables,
    partition,
    save_processed,
)
from .encoder import EncoderConfig, Model, encode, init_model
from .encoding import build_visibility, linearize
from .errors import ConfigError, TabrepError
from .pretrain import TrainSettings, fit, masked_recovery_accuracy
from .store import Config, load_checkpoint, load_config, parse_config, save_checkpoint
from . import tasks as T

TASKS = ("linking", "coltype", "relations", "rowpop", "fill", "schema")


def _info(msg: str) -> None:
    print(msg, flush=True)


def resolve_seed(cli_seed, cfg: Config) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("TABREP_SEED")
    if env is not None and env != "":
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"TABREP_SEED must be an integer, got {env!r}") from exc
    return cfg.seed


def _config_from_args(args) -> Config:
    cfg = Config()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    cfg.seed = resolve_seed(getattr(args, "seed", None), cfg)
    cfg.validate()
    return cfg


def encoder_config(cfg: Config, n_tokens: int, n_entities: int) -> EncoderConfig:
    return EncoderConfig(
        n_blocks=cfg.n_blocks,
        d_model=cfg.d_model,
        n_heads=cfg.n_heads,
        d_intermediate=cfg.d_intermediate,
        max_len=cfg.max_len,
        n_tokens=n_tokens,
        n_entities=n_entities,
    )


def _load_vocabs(data_dir: str) -> tuple[Vocab, Vocab]:
    token_vocab = Vocab.load(os.path.join(data_dir, "token_vocab.tsv"), TOKEN_RESERVED)
    entity_vocab = Vocab.load(os.path.join(data_dir, "entity_vocab.tsv"), ENTITY_RESERVED)
    return token_vocab, entity_vocab


def _load_split(data_dir: str, name: str):
    path = os.path.join(data_dir, f"{name}.jsonl")
    if not os.path.exists(path):
        raise ConfigError(f"{path} not found; run preprocess first")
    return load_processed(path)


def _corpus_index(data_dir: str, token_vocab: Vocab, entity_vocab: Vocab, rebuild: bool) -> CorpusIndex:
    """Build the train-split co-occurrence index, or reuse the cached pickle."""
    path = os.path.join(data_dir, "index.pkl")
    if os.path.exists(path) and not rebuild:
        return CorpusIndex.load(path)
    train = [index_table(t, token_vocab, entity_vocab) for t in _load_split(data_dir, "train")]
    index = CorpusIndex.build(train, token_vocab.strings)
    index.save(path)
    return index


def restore_model(path: str) -> tuple[Model, Config, dict, dict]:
    """Rebuild a Model from a checkpoint. Returns (model, config, arrays, extra)."""
    arrays, config_text, _, extra = load_checkpoint(path)
    cfg = parse_config(config_text)
    if "n_tokens" not in extra or "n_entities" not in extra:
        raise ConfigError(f"{path}: checkpoint lacks vocabulary sizes")
    ecfg = encoder_config(cfg, int(extra["n_tokens"]), int(extra["n_entities"]))
    model = init_model(ecfg, np.random.default_rng(0), dtype=arrays["word_emb"].dtype)
    model.load_arrays({k: v for k, v in arrays.items() if not k.startswith("head.")})
    return model, cfg, arrays, extra


def _head_arrays(head) -> dict[str, np.ndarray]:
    return {"head." + p.name: p.data for p in head.params()}


def _load_head(head, arrays: dict[str, np.ndarray]) -> None:
    for p in head.params():
        key = "head." + p.name
        if key not in arrays:
            raise ConfigError(f"checkpoint lacks task tensor {key!r}")
        if arrays[key].shape != p.data.shape:
            raise ConfigError(f"task tensor {key!r} shape mismatch")
        p.data[...] = arrays[key]


def _side_dir(args, data_dir: str) -> str:
    if getattr(args, "side", None):
        return args.side
    meta_path = os.path.join(data_dir, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path, encoding="utf-8") as fh:
            src = json.load(fh).get("source_dir")
        if src and os.path.isdir(src):
            return src
    return data_dir


def _write_report(report: dict, out_path) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        _info(f"wrote {out_path}")
    _info(text)


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    cfg = _config_from_args(args)
    tables, skipped = load_raw_tables(args.corpus)
    _info(f"parsed {len(tables)} tables, skipped {len(skipped)}")
    splits = partition(tables, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    token_vocab, entity_vocab = build_vocabs(
        splits["train"], min_token_count=cfg.min_token_count, min_entity_count=cfg.min_entity_count
    )
    for name in ("train", "valid", "test"):
        save_processed(os.path.join(args.out, f"{name}.jsonl"), splits[name])
    token_vocab.save(os.path.join(args.out, "token_vocab.tsv"))
    entity_vocab.save(os.path.join(args.out, "entity_vocab.tsv"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.as_text())
    meta = {
        "n_raw": len(tables) + len(skipped),
        "n_skipped": len(skipped),
        "splits": {k: len(v) for k, v in splits.items()},
        "n_tokens": len(token_vocab),
        "n_entities": len(entity_vocab),
        "source_dir": os.path.dirname(os.path.abspath(args.corpus)),
        "config_hash": cfg.hash(),
    }
    with open(os.path.join(args.out, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    _info(f"splits: train={meta['splits']['train']} valid={meta['splits']['valid']} test={meta['splits']['test']}")
    _info(f"vocab: {len(token_vocab)} tokens, {len(entity_vocab)} entities")

    if args.dump_visibility:
        wanted = args.dump_visibility
        all_tables = {t.table_id: t for split in splits.values() for t in split}
        if wanted not in all_tables:
            raise ConfigError(f"table {wanted!r} not present in any split")
        it = index_table(all_tables[wanted], token_vocab, entity_vocab)
        seq = linearize(it, cfg.max_len)
        vis = build_visibility(seq)
        dump = {
            "table_id": wanted,
            "elements": [
                {"kind": el.kind, "row": el.row, "col": el.col, "is_entity": el.is_entity}
                for el in seq.elements
            ],
            "matrix": vis.astype(int).tolist(),
        }
        path = os.path.join(args.out, f"visibility_{wanted}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(dump, fh)
        _info(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# pretrain


def cmd_pretrain(args) -> int:
    cfg = _config_from_args(args)
    if args.epochs is not None:
        cfg.pretrain_epochs = args.epochs
    token_vocab, entity_vocab = _load_vocabs(args.data)
    train = [index_table(t, token_vocab, entity_vocab) for t in _load_split(args.data, "train")]
    valid = [index_table(t, token_vocab, entity_vocab) for t in _load_split(args.data, "valid")]
    index = _corpus_index(args.data, token_vocab, entity_vocab, args.rebuild_index)
    _info(f"pre-training on {len(train)} tables ({len(token_vocab)} tokens, {len(entity_vocab)} entities)")

    settings = TrainSettings(
        mlm_ratio=cfg.mlm_ratio,
        mer_ratio=cfg.mer_ratio,
        lr0=cfg.lr0,
        epochs=cfg.pretrain_epochs,
        batch_size=cfg.batch_size,
        candidate_cap=cfg.candidate_cap,
        use_visibility=cfg.use_visibility,
        seed=cfg.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    metrics_path = os.path.join(args.out, "metrics.jsonl")
    log = open(metrics_path, "w", encoding="utf-8")

    def on_epoch(record: dict) -> bool:
        log.write(json.dumps(record) + "\n")
        log.flush()
        if record["epoch"] % 10 == 0 or record["epoch"] == cfg.pretrain_epochs - 1:
            _info(
                f"epoch {record['epoch']}: loss={record['loss']:.4f} "
                f"mlm_acc={record['mlm_acc']:.3f} mer_acc={record['mer_acc']:.3f}"
            )
        return False

    ecfg = encoder_config(cfg, len(token_vocab), len(entity_vocab))
    try:
        model, history = fit(
            train,
            ecfg,
            settings,
            index.cooccur,
            valid_tables=valid if args.track_recovery else None,
            epoch_callback=on_epoch,
        )
    finally:
        log.close()

    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_checkpoint(
        ckpt,
        model.named_arrays(),
        cfg.as_text(),
        step=len(history.step_losses),
        extra={"n_tokens": len(token_vocab), "n_entities": len(entity_vocab)},
    )
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfg.as_text())
    _info(f"wrote {ckpt} and {metrics_path}")
    return 0


# ---------------------------------------------------------------------------
# finetune


def _packs_for(split_tables, token_vocab, entity_vocab, max_len):
    return T.pack_tables(split_tables, token_vocab, entity_vocab, max_len)


def cmd_finetune(args) -> int:
    model, cfg, _, extra = restore_model(args.checkpoint)
    if args.config:
        cfg = load_config(args.config, cfg)
    cfg.seed = resolve_seed(args.seed, cfg)
    if args.seeds is not None:
        cfg.seed_cells = args.seeds
    cfg.validate()

    token_vocab, entity_vocab = _load_vocabs(args.data)
    side = T.load_side_data(_side_dir(args, args.data))
    train_packs = _packs_for(_load_split(args.data, "train"), token_vocab, entity_vocab, cfg.max_len)
    settings = T.FinetuneSettings(
        lr0=cfg.finetune_lr0,
        epochs=cfg.finetune_epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        use_visibility=cfg.use_visibility,
    )
    rng = np.random.default_rng(cfg.seed)
    tokenizer = WordTokenizer()
    d = model.cfg.d_model
    task = args.task

    if task == "fill":
        raise ConfigError("cell filling reuses the pre-trained checkpoint; nothing to fine-tune")

    labels: list[str] = []
    head = None
    if task == "coltype":
        instances, labels = T.build_column_type_data(train_packs, entity_vocab, side)
        head = T.ColumnTypeHead(d, len(labels), rng, dtype=model.dtype)
        _info(f"{len(instances)} column instances, {len(labels)} types")
        losses = T.train_column_types(model, head, train_packs, instances, settings, len(labels))
    elif task == "relations":
        instances, labels = T.build_relation_data(train_packs, entity_vocab, side)
        head = T.RelationHead(d, len(labels), rng, dtype=model.dtype)
        _info(f"{len(instances)} column-pair instances, {len(labels)} relations")
        losses = T.train_relations(model, head, train_packs, instances, settings, len(labels))
    elif task == "linking":
        labels = sorted({t for e in side.kb.values() for t in e.types})
        instances = T.build_linking_data(train_packs, side, require_gold=True)
        head = T.LinkingHead(d, labels, rng, dtype=model.dtype)
        _info(f"{len(instances)} cell instances, {len(labels)} entry types")
        losses = T.train_linking(model, head, train_packs, instances, side, token_vocab, tokenizer, settings)
    elif task == "rowpop":
        index = _corpus_index(args.data, token_vocab, entity_vocab, rebuild=False)
        instances = T.build_row_population_data(
            train_packs, index, token_vocab, cfg.seed_cells, cfg.rp_retrieval_k
        )
        _info(f"{len(instances)} row-population instances")
        losses = T.train_row_population(model, train_packs, instances, settings, cfg.max_len)
    elif task == "schema":
        labels = T.header_vocabulary(train_packs, cfg.sa_min_header_tables)
        if not labels:
            raise ConfigError("no headers clear sa_min_header_tables; lower the threshold")
        instances = T.build_schema_data(train_packs, labels, cfg.seed_cells)
        head = T.SchemaHead(d, len(labels), rng, dtype=model.dtype)
        settings.epochs = cfg.sa_epochs
        _info(f"{len(instances)} schema instances, {len(labels)} headers")
        losses = T.train_schema(model, head, train_packs, instances, labels, token_vocab, settings, cfg.max_len)
    else:
        raise ConfigError(f"unknown task {task!r}")

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.jsonl"), "w", encoding="utf-8") as fh:
        for i, loss in enumerate(losses):
            fh.write(json.dumps({"epoch": i, "loss": loss}) + "\n")
    arrays = dict(model.named_arrays())
    if head is not None:
        arrays.update(_head_arrays(head))
    ckpt = os.path.join(args.out, f"{task}_checkpoint.bin")
    save_checkpoint(
        ckpt,
        arrays,
        cfg.as_text(),
        step=len(losses),
        extra={
            "task": task,
            "labels": labels,
            "n_tokens": int(extra["n_tokens"]),
            "n_entities": int(extra["n_entities"]),
        },
    )
    _info(f"wrote {ckpt} (final epoch loss {losses[-1]:.4f})")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _baseline_report(args, cfg, task, packs, token_vocab, entity_vocab, side, index) -> dict:
    mode = args.baseline
    if task == "linking":
        if mode != "lookup":
            raise ConfigError(f"linking baseline must be 'lookup', got {mode!r}")
        instances = T.build_linking_data(packs, side, require_gold=False)
        return T.eval_linking_lookup(instances)
    if task == "relations":
        if mode != "votes":
            raise ConfigError(f"relations baseline must be 'votes', got {mode!r}")
        instances, labels = T.build_relation_data(packs, entity_vocab, side)
        return T.eval_relations_votes(instances, entity_vocab, side, labels, cfg.re_vote_threshold)
    if task == "fill":
        if mode not in ("exact", "pair"):
            raise ConfigError(f"fill baseline must be 'exact' or 'pair', got {mode!r}")
        instances = T.build_fill_data(packs, index)
        return T.eval_cell_filling_baseline(index, packs, instances, mode)
    if task == "schema":
        if mode != "caption":
            raise ConfigError(f"schema baseline must be 'caption', got {mode!r}")
        labels = T.header_vocabulary(packs, min_tables=1)
        instances = T.build_schema_data(packs, labels, cfg.seed_cells)
        return T.eval_schema_baseline(index, packs, instances, token_vocab)
    raise ConfigError(f"no baseline defined for task {task!r}")


def cmd_evaluate(args) -> int:
    task = args.task
    needs_model = args.baseline is None
    if needs_model and not args.checkpoint:
        raise ConfigError("evaluate needs --checkpoint unless --baseline is given")

    if needs_model:
        model, cfg, arrays, extra = restore_model(args.checkpoint)
        if task != "fill" and extra.get("task") not in (None, task):
            raise ConfigError(f"checkpoint was fine-tuned for {extra.get('task')!r}, not {task!r}")
    else:
        model, arrays, extra = None, {}, {}
        cfg = Config()
        if args.config:
            cfg = load_config(args.config, cfg)
    cfg.seed = resolve_seed(args.seed, cfg)
    if args.seeds is not None:
        cfg.seed_cells = args.seeds
    cfg.validate()

    token_vocab, entity_vocab = _load_vocabs(args.data)
    side = T.load_side_data(_side_dir(args, args.data))
    packs = _packs_for(_load_split(args.data, args.split), token_vocab, entity_vocab, cfg.max_len)
    need_index = task in ("rowpop", "fill", "schema")
    index = _corpus_index(args.data, token_vocab, entity_vocab, rebuild=False) if need_index else None
    tokenizer = WordTokenizer()
    d = cfg.d_model
    rng = np.random.default_rng(0)

    if args.baseline is not None:
        body = _baseline_report(args, cfg, task, packs, token_vocab, entity_vocab, side, index)
    elif task == "coltype":
        labels = list(extra.get("labels", []))
        instances, _ = T.build_column_type_data(packs, entity_vocab, side, type_list=labels)
        head = T.ColumnTypeHead(d, len(labels), rng, dtype=model.dtype)
        _load_head(head, arrays)
        body = T.eval_column_types(model, head, packs, instances, use_visibility=cfg.use_visibility)
    elif task == "relations":
        labels = list(extra.get("labels", []))
        instances, _ = T.build_relation_data(packs, entity_vocab, side, relation_list=labels)
        head = T.RelationHead(d, len(labels), rng, dtype=model.dtype)
        _load_head(head, arrays)
        body = T.eval_relations(model, head, packs, instances, use_visibility=cfg.use_visibility)
    elif task == "linking":
        labels = list(extra.get("labels", []))
        instances = T.build_linking_data(packs, side, require_gold=False)
        head = T.LinkingHead(d, labels, rng, dtype=model.dtype)
        _load_head(head, arrays)
        body = T.eval_linking(
            model,
            head,
            packs,
            instances,
            side,
            token_vocab,
            tokenizer,
            use_visibility=cfg.use_visibility,
            reweight=args.reweight,
            alpha=cfg.el_reweight_alpha,
            use_description=not args.no_description,
        )
    elif task == "rowpop":
        instances = T.build_row_population_data(packs, index, token_vocab, cfg.seed_cells, cfg.rp_retrieval_k)
        body = T.eval_row_population(model, packs, instances, cfg.max_len, use_visibility=cfg.use_visibility)
    elif task == "fill":
        instances = T.build_fill_data(packs, index)
        body = T.eval_cell_filling(model, packs, instances, use_visibility=cfg.use_visibility)
    elif task == "schema":
        labels = list(extra.get("labels", []))
        instances = T.build_schema_data(packs, labels, cfg.seed_cells)
        head = T.SchemaHead(d, len(labels), rng, dtype=model.dtype)
        _load_head(head, arrays)
        body = T.eval_schema(
            model, head, packs, instances, labels, token_vocab, cfg.max_len, use_visibility=cfg.use_visibility
        )
    else:
        raise ConfigError(f"unknown task {task!r}")

    report = {
        "task": task,
        "split": args.split,
        "baseline": args.baseline,
        "metrics": body["metrics"],
        "n_instances": body["n_instances"],
        "config_hash": cfg.hash(),
    }
    _write_report(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    cfg = _config_from_args(args)
    if args.epochs is not None:
        cfg.pretrain_epochs = args.epochs
    token_vocab, entity_vocab = _load_vocabs(args.data)
    train = [index_table(t, token_vocab, entity_vocab) for t in _load_split(args.data, "train")]
    valid = [index_table(t, token_vocab, entity_vocab) for t in _load_split(args.data, "valid")]
    index = _corpus_index(args.data, token_vocab, entity_vocab, rebuild=False)
    ecfg = encoder_config(cfg, len(token_vocab), len(entity_vocab))
    ratios = [float(x) for x in args.mer_grid.split(",") if x.strip()]
    if not ratios:
        raise ConfigError("empty --mer-grid")

    rows = []
    for use_visibility in (True, False):
        for ratio in ratios:
            settings = TrainSettings(
                mlm_ratio=cfg.mlm_ratio,
                mer_ratio=ratio,
                lr0=cfg.lr0,
                epochs=cfg.pretrain_epochs,
                batch_size=cfg.batch_size,
                candidate_cap=cfg.candidate_cap,
                use_visibility=use_visibility,
                seed=cfg.seed,
            )
            model, history = fit(train, ecfg, settings, index.cooccur)
            acc = masked_recovery_accuracy(
                model,
                valid,
                index.cooccur,
                cap=cfg.candidate_cap,
                seed=cfg.seed,
                use_visibility=use_visibility,
                only_objects=True,
            )
            row = {
                "use_visibility": use_visibility,
                "mer_ratio": ratio,
                "oep_acc": acc,
                "final_loss": history.epochs[-1]["loss"] if history.epochs else None,
            }
            rows.append(row)
            _info(f"visibility={'on' if use_visibility else 'off'} mer_ratio={ratio}: recovery={acc:.3f}")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        _info(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tabrep", description="structure-aware table representation toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("preprocess", parents=[common], help="clean, split, and index a raw corpus")
    p.add_argument("--corpus", required=True, help="raw JSONL table file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-visibility", metavar="TABLE_ID", help="also dump one table's visibility matrix")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", parents=[common], help="run masked pre-training")
    p.add_argument("--data", required=True, help="preprocess output directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--epochs", type=int, help="override pretrain_epochs")
    p.add_argument("--rebuild-index", action="store_true", help="ignore any cached corpus index")
    p.add_argument("--track-recovery", action="store_true", help="score masked recovery on valid each epoch")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", parents=[common], help="fit one task head")
    p.add_argument("--task", required=True, choices=[t for t in TASKS if t != "fill"])
    p.add_argument("--checkpoint", required=True, help="pre-trained checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--side", help="directory with side files (types, relations, kb, candidates)")
    p.add_argument("--seeds", type=int, help="seed cells / headers given to ranking tasks")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="score a task on a held-out split")
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--checkpoint", help="task checkpoint (fill accepts the pre-train checkpoint)")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--side", help="directory with side files")
    p.add_argument("--out", help="write the report JSON here")
    p.add_argument("--baseline", help="score a non-neural baseline instead: lookup, votes, exact, pair, caption")
    p.add_argument("--reweight", action="store_true", help="linking: blend model and lookup ranks")
    p.add_argument("--no-description", action="store_true", help="linking: drop descriptions from entries")
    p.add_argument("--seeds", type=int, help="seed cells / headers given to ranking tasks")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", parents=[common], help="grid over visibility and cell-mask ratio")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write one JSON line per grid point here")
    p.add_argument("--epochs", type=int, help="override pretrain_epochs for the short runs")
    p.add_argument("--mer-grid", default="0.2,0.4,0.6,0.8")
    p.set_defaults(func=cmd_ablate)
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def main() -> None:
    try:
        raise SystemExit(run())
    except TabrepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(1)


if __name__ == "__main__":
    main()
