"""Operator entry point.

Subcommands: gen-data (synthesize a corpus), train (fit a baseline or
biasing-enhanced model), eval (score a checkpoint on a test corpus),
ablate (train and score all system variants over several seeds).

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
Set XCB_LOG={error,info,debug} to control verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from pathlib import Path

from . import checkpoint as CK
from . import data as D
from . import metrics as MET
from . import model as M
from . import training as TR
from .config import (
    RunConfig,
    build_run_config,
    parse_kv_file,
    replace_seed,
    to_flat_dict,
    write_kv_file,
)
from .errors import ConfigError, DataError, InputError, NumericalError, XcbError

log = logging.getLogger("xcb")

SYSTEM_BASELINE = "baseline"
SYSTEM_XCB = "xcb"
SYSTEM_XCB_NBM = "xcb:nbm"


def _setup_logging() -> None:
    level = os.environ.get("XCB_LOG", "info").strip().lower()
    mapping = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(
        level=mapping.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_config(path: str | None, overrides: dict[str, str]) -> RunConfig:
    file_kvs = parse_kv_file(path) if path else {}
    return build_run_config(file_kvs, overrides)


def _flag_overrides(args) -> dict[str, str]:
    out: dict[str, str] = {}
    if getattr(args, "alpha", None) is not None:
        out["train.alpha"] = str(args.alpha)
    if getattr(args, "freeze_backbone", False):
        out["train.freeze_backbone"] = "true"
    if getattr(args, "mode", None):
        out["eval.mode"] = args.mode
    if getattr(args, "hotword_n", None) is not None:
        out["eval.hotword_n"] = str(args.hotword_n)
    return out


# --- gen-data ---------------------------------------------------------------


def cmd_gen_data(config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test, pool = D.generate_corpus(config.corpus)
    D.write_corpus(out_dir / "train.jsonl", train)
    D.write_corpus(out_dir / "test.jsonl", test)
    D.write_entity_pool(out_dir / "entities.txt", pool)
    write_kv_file(out_dir / "config.txt", to_flat_dict(config))
    log.info("wrote %d train / %d test utterances to %s", len(train), len(test), out_dir)


# --- train ------------------------------------------------------------------


def _corpus_dir_config(corpus_dir: Path) -> dict[str, str]:
    cfg_path = corpus_dir / "config.txt"
    if not cfg_path.exists():
        raise DataError(f"{corpus_dir} has no config.txt; not a corpus directory")
    return parse_kv_file(cfg_path)


def _merge_with_corpus_dir(corpus_dir: Path, config_path: str | None,
                           overrides: dict[str, str]) -> RunConfig:
    """The corpus directory owns corpus.*; everything else is overridable."""
    dir_kvs = _corpus_dir_config(corpus_dir)
    file_kvs = parse_kv_file(config_path) if config_path else {}
    merged = dict(dir_kvs)
    merged.update(file_kvs)
    merged.update(overrides)
    for key, value in dir_kvs.items():
        if key.startswith("corpus."):
            merged[key] = value
    return build_run_config(merged, {})


def _load_corpus_dir(corpus_dir: Path, split: str):
    cfg = build_run_config(_corpus_dir_config(corpus_dir), {})
    vocab = cfg.corpus.vocabulary()
    utts = D.parse_corpus(corpus_dir / f"{split}.jsonl", vocab)
    pool = D.read_entity_pool(corpus_dir / "entities.txt", vocab)
    return cfg, vocab, utts, pool


def cmd_train(config: RunConfig, corpus_dir: Path, variant: str,
              out_path: Path, plot: bool = False) -> Path:
    _, _, train_utts, pool = _load_corpus_dir(corpus_dir, "train")
    if not train_utts:
        raise DataError(f"{corpus_dir}/train.jsonl is empty")
    tc = config.train
    if variant == "baseline":
        # The baseline has no biasing insert and no secondary loss.
        tc = TR.TrainConfig(**{**tc.__dict__, "alpha": 0.0})
    params = M.init_params(config.model, tc.seed, variant)

    epoch_rows: list[dict] = []

    def sink(row: dict) -> None:
        epoch_rows.append(row)
        log.info("epoch %d: l_total=%.4f (asr=%.4f bias=%.4f 2nd=%.4f)",
                 row["epoch"], row["l_total"], row["l_asr"], row["l_bias"], row["l_ce_2nd"])

    TR.train(train_utts, pool, params, config.model, tc, report_sink=sink)

    meta = {
        "config": to_flat_dict(RunConfig(config.corpus, config.model, tc, config.eval)),
        "variant": variant,
        "seed": tc.seed,
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    CK.save_checkpoint(out_path, params, meta)
    report_path = Path(str(out_path) + ".epochs.jsonl")
    with open(report_path, "w", encoding="utf-8") as fh:
        for row in epoch_rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if plot:
        from . import plots
        plots.plot_loss_curves(epoch_rows, Path(str(out_path) + ".loss.svg"))
    log.info("checkpoint written to %s", out_path)
    return out_path


# --- eval -------------------------------------------------------------------


def _system_label(variant: str, mode: str) -> str:
    if variant == "baseline":
        return SYSTEM_BASELINE
    return SYSTEM_XCB if mode == "active" else SYSTEM_XCB_NBM


def run_eval(params: M.ModelParams, ckpt_config: RunConfig, variant: str,
             test_utts, pool, mode: str, hotword_n: int, list_seed: int
             ) -> MET.EvalReport:
    """Decode every test utterance with its constructed hotword list and
    score the corpus."""
    if not test_utts:
        raise DataError("test corpus is empty")
    vocab = ckpt_config.corpus.vocabulary()
    inference_mode = (M.InferenceMode.ACTIVE_XCB if mode == "active"
                      else M.InferenceMode.INACTIVE_XCB)
    lists = D.corpus_hotword_lists(test_utts, pool, hotword_n, list_seed)
    refs = []
    hyps = []
    for utt, hotwords in zip(test_utts, lists):
        ids = M.infer(utt.features, hotwords, inference_mode, params, ckpt_config.model)
        refs.append(list(utt.tokens))
        hyps.append([vocab.token(i) for i in ids])
    return MET.evaluate_corpus(refs, hyps, lists)


def cmd_eval(checkpoint_path: Path, corpus_dir: Path, config_path: str | None,
             overrides: dict[str, str], out_dir: Path, plot: bool = False
             ) -> MET.EvalReport:
    params, meta = CK.load_checkpoint(checkpoint_path)
    variant = meta["variant"]
    merged = dict(meta["config"])
    if config_path:
        merged.update(parse_kv_file(config_path))
    merged.update(overrides)
    ckpt_config = build_run_config(merged, {})
    M.check_params(params, ckpt_config.model, variant)

    corpus_cfg = build_run_config(_corpus_dir_config(corpus_dir), {}).corpus
    for field in ("l1_vocab", "l2_vocab", "d_feat"):
        if getattr(corpus_cfg, field) != getattr(ckpt_config.corpus, field):
            raise ConfigError(
                f"checkpoint expects corpus.{field}="
                f"{getattr(ckpt_config.corpus, field)}, corpus dir has "
                f"{getattr(corpus_cfg, field)}")
    vocab = corpus_cfg.vocabulary()
    test_utts = D.parse_corpus(corpus_dir / "test.jsonl", vocab)
    pool = D.read_entity_pool(corpus_dir / "entities.txt", vocab)

    mode = ckpt_config.eval.mode
    if variant == "baseline":
        # No biasing insert to toggle: either mode is the plain forward.
        mode = "inactive"
    report = run_eval(params, ckpt_config, variant, test_utts, pool,
                      mode, ckpt_config.eval.hotword_n, ckpt_config.eval.seed)

    out_dir.mkdir(parents=True, exist_ok=True)
    system = _system_label(variant, mode)
    extra = {
        "system": system,
        "mode": mode,
        "hotword_n": ckpt_config.eval.hotword_n,
        "variant": variant,
        "seed": meta["seed"],
        "config": meta["config"],
    }
    (out_dir / "report.json").write_text(MET.report_to_json(report, extra),
                                         encoding="utf-8")
    _write_csv(out_dir / "report.csv",
               [MET.report_csv_row(system, meta["seed"], "", report)])
    if plot:
        from . import plots
        plots.plot_eval_metrics(report.to_dict(), out_dir / "metrics.svg")
    log.info("eval report written to %s", out_dir)
    return report


def _write_csv(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MET.CSV_FIELDS)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row])


# --- ablate -----------------------------------------------------------------


def cmd_ablate(config: RunConfig, corpus_dir: Path, seeds: list[int],
               out_dir: Path, plot: bool = False) -> list[dict]:
    """Train baseline and biasing variants per seed, evaluate the biasing
    model in both inference modes, and emit a comparison table with
    per-seed rows plus a median block."""
    if not seeds:
        raise ConfigError("ablate needs at least one seed")
    out_dir.mkdir(parents=True, exist_ok=True)
    _, _, test_utts, pool = _load_corpus_dir(corpus_dir, "test")

    rows: list[dict] = []
    for seed in seeds:
        cfg = replace_seed(config, seed)
        ckpts = {}
        for variant in ("baseline", "xcb"):
            out_path = out_dir / f"{variant}_seed{seed}.ckpt"
            cmd_train(cfg, corpus_dir, variant, out_path)
            ckpts[variant] = out_path
        plan = [
            (SYSTEM_BASELINE, "baseline", "inactive"),
            (SYSTEM_XCB, "xcb", "active"),
            (SYSTEM_XCB_NBM, "xcb", "inactive"),
        ]
        for system, variant, mode in plan:
            params, meta = CK.load_checkpoint(ckpts[variant])
            ckpt_config = build_run_config(dict(meta["config"]), {})
            report = run_eval(params, ckpt_config, variant, test_utts, pool,
                              mode, cfg.eval.hotword_n, cfg.eval.seed)
            row = {"system": system, "seed": seed,
                   "checkpoint": ckpts[variant].name, **report.to_dict()}
            rows.append(row)
            log.info("seed %d %s: mer=%.4f bwer=%s", seed, system, report.mer,
                     f"{report.bwer:.4f}" if report.bwer is not None else "n/a")

    median_rows = []
    for system in (SYSTEM_BASELINE, SYSTEM_XCB, SYSTEM_XCB_NBM):
        group = [r for r in rows if r["system"] == system]
        med = {"system": system, "seed": "median", "checkpoint": ""}
        for key in MET.CSV_FIELDS[3:]:
            values = [r[key] for r in group if r[key] is not None]
            med[key] = statistics.median(values) if values else None
        median_rows.append(med)

    table = rows + median_rows
    _write_csv(out_dir / "ablation.csv",
               [[r[k] if r[k] is not None else None for k in MET.CSV_FIELDS]
                for r in table])
    if plot:
        from . import plots
        plots.plot_ablation(median_rows, out_dir / "ablation.svg")
    log.info("ablation table written to %s", out_dir / "ablation.csv")
    return table


# --- argument parsing ---------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xcb",
        description="Bilingual contextual-biasing ASR testbed on synthetic data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a train/test corpus")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="override every seed")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.set_defaults(func=_run_gen_data)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("corpus_dir", help="directory produced by gen-data")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--variant", choices=["baseline", "xcb"], default="xcb")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--alpha", type=float, help="secondary-loss weight")
    p.add_argument("--freeze-backbone", action="store_true",
                   help="train only the adapter and gate")
    p.add_argument("--plot", action="store_true", help="write a loss-curve figure")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_run_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test corpus")
    p.add_argument("checkpoint")
    p.add_argument("corpus_dir")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--mode", choices=["active", "inactive"])
    p.add_argument("--hotword-n", type=int, dest="hotword_n")
    p.add_argument("--seed", type=int, help="hotword list sampling seed")
    p.add_argument("--plot", action="store_true", help="write a metrics figure")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=_run_eval)

    p = sub.add_parser("ablate", help="baseline vs biasing comparison over seeds")
    p.add_argument("corpus_dir")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seed list")
    p.add_argument("--hotword-n", type=int, dest="hotword_n")
    p.add_argument("--plot", action="store_true", help="write a comparison figure")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_run_ablate)
    return parser


def _run_gen_data(args) -> int:
    config = _load_config(args.config, _flag_overrides(args))
    if args.seed is not None:
        config = replace_seed(config, args.seed)
    cmd_gen_data(config, Path(args.out))
    return 0


def _run_train(args) -> int:
    config = _merge_with_corpus_dir(Path(args.corpus_dir), args.config,
                                    _flag_overrides(args))
    if args.seed is not None:
        config = replace_seed(config, args.seed)
    cmd_train(config, Path(args.corpus_dir), args.variant, Path(args.out),
              plot=args.plot)
    return 0


def _run_eval(args) -> int:
    overrides = _flag_overrides(args)
    if args.seed is not None:
        overrides["eval.seed"] = str(args.seed)
    cmd_eval(Path(args.checkpoint), Path(args.corpus_dir), args.config,
             overrides, Path(args.out), plot=args.plot)
    return 0


def _run_ablate(args) -> int:
    config = _merge_with_corpus_dir(Path(args.corpus_dir), args.config,
                                    _flag_overrides(args))
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}")
    cmd_ablate(config, Path(args.corpus_dir), seeds, Path(args.out), plot=args.plot)
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (DataError, InputError) as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return 4
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 3
    except XcbError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
