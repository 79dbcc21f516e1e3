"""Command line entry point: ``audiodiff {gen,train,eval,probe,gradcheck}``.

Exit codes: 0 success, 1 failed gradient check, 2 invalid configuration or
incompatible checkpoint, 3 I/O failure, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..difflearn import MODES, FeatureStore, NonFiniteLoss, collate, epoch_examples, evaluate_loss, train
from ..evalkit import difference_probe, evaluate
from ..gradcore import Tensor
from ..model import Captioner, ModelConfig, Vocabulary
from ..scenegen import generate_corpus, load_corpus, write_corpus
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config

log = logging.getLogger("audiodiff")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


def run_paths(cfg: RunConfig) -> dict[str, Path]:
    root = cfg.out_dir
    return {
        "root": root,
        "snapshot": root / "config.snapshot",
        "manifest": root / "manifest.jsonl",
        "ckpt": root / "ckpt",
        "logs": root / "logs",
        "reports": root / "reports",
    }


def cmd_gen(cfg: RunConfig) -> str:
    paths = run_paths(cfg)
    paths["root"].mkdir(parents=True, exist_ok=True)
    paths["snapshot"].write_text(cfg.dumps())
    manifest = generate_corpus(cfg.scenegen, cfg.run.seed, sample_rate=cfg.dsp.sample_rate)
    digest = write_corpus(manifest, paths["root"])
    print(f"wrote {len(manifest.train)}/{len(manifest.valid)}/{len(manifest.test)} scenes, "
          f"{len(manifest.bank)} bank clips to {paths['root']}")
    print(f"manifest sha256 {digest}")
    return digest


def _checkpoint(model: Captioner, params: dict[str, np.ndarray], cfg: RunConfig, mode: str, step: int, metrics: dict):
    return Checkpoint(
        {k: np.asarray(v) for k, v in params.items()},
        cfg.corpus_hash(),
        model.vocab.tokens,
        mode,
        step,
        model.config_dict(),
        metrics,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> Captioner:
    mcfg = ModelConfig(**ckpt.model_config)
    vocab = Vocabulary(ckpt.vocab[3:])
    if vocab.tokens != ckpt.vocab:
        raise CheckpointError("vocabulary specials out of order in checkpoint")
    params = {k: Tensor(v.astype(mcfg.dtype), requires_grad=True, name=k) for k, v in ckpt.params.items()}
    return Captioner(mcfg, vocab, params)


def cmd_train(cfg: RunConfig, mode: str | None = None) -> dict:
    mode = mode or cfg.train.mode
    cfg.train.mode = mode
    cfg.validate()
    paths = run_paths(cfg)
    corpus = load_corpus(paths["root"])
    model = Captioner(cfg.model, Vocabulary.from_grammar())
    for key in ("ckpt", "logs"):
        paths[key].mkdir(parents=True, exist_ok=True)
    result = train(cfg.train, corpus, model, cfg.dsp)
    steps = result.log.steps
    (paths["logs"] / f"train_{mode}.jsonl").write_text("".join(line + "\n" for line in result.log.step_lines()))
    (paths["logs"] / f"valid_{mode}.jsonl").write_text(
        "".join(json.dumps(e, sort_keys=True) + "\n" for e in result.log.epochs)
    )
    final_valid = result.log.epochs[-1]["valid_loss"]
    final = _checkpoint(model, {k: v.data for k, v in model.params.items()}, cfg, mode, len(steps),
                        {"valid_loss": final_valid, "epoch": result.log.epochs[-1]["epoch"]})
    best = _checkpoint(model, result.best_params, cfg, mode, len(steps),
                       {"valid_loss": result.best_valid_loss, "epoch": result.best_epoch})
    save_checkpoint(final, paths["ckpt"] / f"{mode}_final.ckpt")
    save_checkpoint(best, paths["ckpt"] / f"{mode}_best.ckpt")
    summary = {
        "mode": mode,
        "steps": len(steps),
        "final_train_loss": steps[-1]["loss"],
        "final_valid_loss": final_valid,
        "best_valid_loss": result.best_valid_loss,
        "best_epoch": result.best_epoch,
        "mixgen_skipped": result.log.mixgen_skipped,
    }
    print(json.dumps(summary, sort_keys=True))
    return summary


def _resolve_checkpoint(cfg: RunConfig, checkpoint: str | None, mode: str | None) -> Path:
    if checkpoint:
        return Path(checkpoint)
    return run_paths(cfg)["ckpt"] / f"{mode or cfg.train.mode}_best.ckpt"


def _load_for_eval(cfg: RunConfig, checkpoint: str | None, mode: str | None):
    ckpt = load_checkpoint(_resolve_checkpoint(cfg, checkpoint, mode), expect_hash=cfg.corpus_hash())
    corpus = load_corpus(run_paths(cfg)["root"])
    return ckpt, model_from_checkpoint(ckpt), corpus


def validation_loss(cfg: RunConfig, model: Captioner, corpus, mode: str) -> float:
    """Recompute the training-time validation loss for ``model``."""
    store = FeatureStore(corpus, cfg.dsp)
    rng = np.random.default_rng([cfg.train.seed, 10**6])
    ex, _ = epoch_examples(mode, corpus.valid, corpus, store, cfg.train, rng)
    bs = cfg.train.batch_size
    batches = [collate(ex[i : i + bs], model.vocab, cfg.train.L_max) for i in range(0, len(ex), bs)]
    return evaluate_loss(model, batches, mode)


def _tag(ckpt_path: Path, mode: str) -> str:
    stem = ckpt_path.stem
    return stem if stem.startswith(mode) else f"{mode}_{stem}"


def cmd_eval(cfg: RunConfig, checkpoint: str | None = None, mode: str | None = None):
    ckpt, model, corpus = _load_for_eval(cfg, checkpoint, mode)
    store = FeatureStore(corpus, cfg.dsp)
    report = evaluate(model, corpus.test, store, cfg.eval)
    out = run_paths(cfg)["reports"]
    out.mkdir(parents=True, exist_ok=True)
    tag = _tag(_resolve_checkpoint(cfg, checkpoint, mode), ckpt.mode)
    (out / f"eval_{tag}.json").write_text(report.to_json())
    (out / f"eval_{tag}.txt").write_text(report.table(ckpt.mode))
    print(report.table(ckpt.mode), end="")
    return report


def cmd_probe(cfg: RunConfig, checkpoint: str | None = None, mode: str | None = None):
    ckpt, model, corpus = _load_for_eval(cfg, checkpoint, mode)
    store = FeatureStore(corpus, cfg.dsp)
    report = difference_probe(model, corpus.test, corpus.bank, store, cfg.eval, seed=cfg.run.probe_seed)
    out = run_paths(cfg)["reports"]
    out.mkdir(parents=True, exist_ok=True)
    tag = _tag(_resolve_checkpoint(cfg, checkpoint, mode), ckpt.mode)
    (out / f"probe_{tag}.json").write_text(report.to_json())
    (out / f"probe_{tag}.txt").write_text(report.table())
    print(report.table(), end="")
    return report


def cmd_gradcheck(tol: float = 1e-4) -> bool:
    from .gradcheck import run_all

    results = run_all(tol)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.op:<28} max_rel_err={r.max_error:.3e}")
    ok = all(r.passed for r in results)
    print("all gradient checks passed" if ok else "gradient check FAILED")
    return ok


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="audiodiff", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen", help="synthesise the scene corpus and reference bank")
    p.add_argument("config")
    p = sub.add_parser("train", help="train one regime and write checkpoints and logs")
    p.add_argument("config")
    p.add_argument("--mode", choices=MODES)
    for name, text in (("eval", "score test-set captions"), ("probe", "run the four-case difference probe")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("--checkpoint", help="defaults to ckpt/<mode>_best.ckpt in the run directory")
        p.add_argument("--mode", choices=MODES)
    sub.add_parser("gradcheck", help="finite-difference check of every primitive and the full loss")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gradcheck":
            return EXIT_OK if cmd_gradcheck() else EXIT_CHECK
        cfg = load_config(args.config)
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.mode)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.mode)
        elif args.command == "probe":
            cmd_probe(cfg, args.checkpoint, args.mode)
    except (ConfigError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLoss as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
