#!/usr/bin/env python3
"""
Command-line entry point.

    python scripts/main.py synth-data --preset toy
    python scripts/main.py train-enhancer --config config/run_config.yaml
    python scripts/main.py combined --config config/run_config.yaml --set training.use_selection=true
    python scripts/main.py evaluate --rnnt runs/x/step3/rnnt_best.ckpt --enhancer runs/x/step3/dcrn_best.ckpt
    python scripts/main.py werr base/summary.csv new/summary.csv
    python scripts/main.py shapes --preset full

Every command prints a single-line diagnostic on failure and exits with
1 (usage/configuration), 2 (data) or 3 (numerical failure).
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from models.checkpoint import load_checkpoint  # noqa: E402
from models.dcrn import FULL_CHAIN, EnhancementModel, build_dcrn, describe_chain, enhance, shape_plan  # noqa: E402
from models.gradcheck import run_grad_suite  # noqa: E402
from models.layers import Module  # noqa: E402
from models.recognizer import Recognizer  # noqa: E402
from models.rnnt import RnntModel, build_rnnt, rnnt_preset  # noqa: E402
from models.selection import build_selection  # noqa: E402
from nodes.asr_trainer import AsrOptions, train_asr  # noqa: E402
from nodes.corpus_loader import prepare_corpus  # noqa: E402
from nodes.enhancer_trainer import train_enhancer  # noqa: E402
from nodes.evaluator import TEST_SPLITS, evaluate  # noqa: E402
from nodes.training_loop import load_examples  # noqa: E402
from utils.corpus import CorpusManifest, load_manifest, synth_corpus  # noqa: E402
from utils.dsp import write_wav  # noqa: E402
from utils.error_handler import NumericalError, ShapeError, UsageError, exit_code_for  # noqa: E402
from utils.metrics import evaluate_enhancer, werr_from_summaries, werr_table  # noqa: E402
from utils.run_config import RunConfig, load_run_config  # noqa: E402
from utils.state_logger import configure_logging, finalize_logging  # noqa: E402
from workflows.graph_builder import run_workflow, start_run  # noqa: E402

logger = logging.getLogger(__name__)


class CliParser(argparse.ArgumentParser):
    """Argument errors raise UsageError so they exit with code 1."""

    def error(self, message: str):
        raise UsageError(message)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, default=None, help="Run config YAML (on top of the preset)")
    parser.add_argument("--preset", type=str, default=None, help="Preset under config/presets (full, toy, tiny)")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override one config key; repeatable")
    parser.add_argument("--threads", type=int, default=int(os.getenv("SERNNT_THREADS", "0")) or None,
                        help="Cap on worker threads (default: SERNNT_THREADS or the config)")


def _models(parser: argparse.ArgumentParser, rnnt_required: bool = True):
    parser.add_argument("--manifest", type=str, default=None, help="Corpus manifest (default: config corpus.path)")
    parser.add_argument("--rnnt", type=str, required=rnnt_required, default=None, help="RNN-T checkpoint")
    parser.add_argument("--enhancer", type=str, default=None, help="DCRN checkpoint")
    parser.add_argument("--selection", type=str, default=None, help="Selection module checkpoint")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = CliParser(description="Speech enhancement front end for transducer ASR", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = sub.add_parser("synth-data", help="Synthesize a tone-syllable corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--out", type=str, default=None, help="Output directory (default: config corpus.path)")
    p.add_argument("--n-utts", type=int, default=None, help="Number of utterances (default: config)")
    p.add_argument("--vocab-size", type=int, default=None, help="Number of symbols (default: config)")
    p.add_argument("--seed", type=int, default=None, help="Corpus seed (default: config)")

    p = sub.add_parser("train-enhancer", help="Train the DCRN on the train split", formatter_class=fmt)
    _common(p)

    p = sub.add_parser("train-asr", help="Train the RNN-T with one augmentation configuration", formatter_class=fmt)
    _common(p)
    p.add_argument("--phase", type=str, default="asr", help="Phase name for logs and checkpoints")
    p.add_argument("--noise", action="store_true", help="Noise augmentation (batch coin)")
    p.add_argument("--enhance", action="store_true", help="Enhancement augmentation (batch coin)")
    p.add_argument("--kl-pairs", type=str, default="none", help="KL pair mode (none, s1s2, s1s3, uniform13_24, s3s4)")
    p.add_argument("--on-enhanced", action="store_true", help="Train on enhanced audio only")
    p.add_argument("--enhancer", type=str, default=None, help="DCRN checkpoint (frozen during training)")
    p.add_argument("--init", type=str, default=None, help="RNN-T checkpoint to initialize from")

    for name, text in (("three-step", "Enhancer, step 1, step 2, joint step 3 [, selection]"),
                       ("combined", "Augmented ASR, then steps 2 and 3 [, selection]")):
        p = sub.add_parser(name, help=text, formatter_class=fmt)
        _common(p)
        p.add_argument("--with-selection", action="store_true", help="Train the selection module after step 3")

    p = sub.add_parser("enhance", help="Write enhanced WAVs for a manifest split", formatter_class=fmt)
    _common(p)
    p.add_argument("--manifest", type=str, default=None, help="Corpus manifest (default: config corpus.path)")
    p.add_argument("--enhancer", type=str, required=True, help="DCRN checkpoint")
    p.add_argument("--split", type=str, default="test-noisy", help="Split to enhance")
    p.add_argument("--out", type=str, default="enhanced", help="Output directory")

    p = sub.add_parser("decode", help="Greedy-decode a manifest split", formatter_class=fmt)
    _common(p)
    _models(p)
    p.add_argument("--split", type=str, default="test-clean", help="Split to decode")
    p.add_argument("--out", type=str, default="transcripts.txt", help="Transcript file (id<TAB>hypothesis)")

    p = sub.add_parser("evaluate", help="WER and SI-SNR on the test splits", formatter_class=fmt)
    _common(p)
    _models(p)
    p.add_argument("--splits", nargs="+", default=list(TEST_SPLITS), help="Splits to score")
    p.add_argument("--out", type=str, default="evaluation", help="Output directory for the CSVs")

    p = sub.add_parser("werr", help="Averaged relative WER reduction from two summaries", formatter_class=fmt)
    p.add_argument("base", type=str, help="Baseline summary CSV")
    p.add_argument("new", type=str, help="New-system summary CSV")
    p.add_argument("--out", type=str, default=None, help="Optional CSV for the report")

    p = sub.add_parser("grad-check", help="Finite-difference gradient suite", formatter_class=fmt)
    p.add_argument("--dcrn-preset", type=str, default="toy", help="DCRN preset for the DCRN check")
    p.add_argument("--seed", type=int, default=0, help="Seed of the random problems")

    p = sub.add_parser("shapes", help="Print the DCRN stage chain and parameter counts", formatter_class=fmt)
    p.add_argument("--preset", type=str, default="full", help="Preset whose models are described")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="Override one config key; repeatable")
    return parser


# ---------------------------------------------------------------------------
# helpers

def _config(args, extra: Optional[List[str]] = None) -> RunConfig:
    overrides = list(getattr(args, "overrides", []) or []) + list(extra or [])
    if getattr(args, "threads", None):
        overrides.append(f"training.threads={args.threads}")
    return load_run_config(getattr(args, "config", None), overrides, preset=getattr(args, "preset", None))


def _manifest(args, config: RunConfig) -> CorpusManifest:
    return load_manifest(args.manifest or config.corpus.path)


def _load(module: Module, path: str) -> Module:
    module.load_state_dict(load_checkpoint(path))
    module.mark_trained(str(path))
    return module


def _recognizer(args, config: RunConfig, manifest: CorpusManifest) -> Recognizer:
    vocabulary = manifest.vocabulary
    rnnt: RnntModel = _load(build_rnnt(config.rnnt_config(vocabulary.size)), args.rnnt)
    dcrn = _load(build_dcrn(config.dcrn_config()), args.enhancer) if args.enhancer else None
    if args.selection and dcrn is None:
        raise UsageError("--selection needs --enhancer")
    sm = _load(build_selection(config.selection_config()), args.selection) if args.selection else None
    return Recognizer(rnnt, vocabulary, dcrn=dcrn, selection=sm,
                      max_symbols_per_frame=config.rnnt.max_symbols_per_frame)


# ---------------------------------------------------------------------------
# commands

def cmd_synth_data(args) -> int:
    config = _config(args)
    c = config.corpus
    out = args.out or c.path
    manifest = synth_corpus(args.n_utts or c.n_utts, args.vocab_size or c.vocab_size,
                            c.seed if args.seed is None else args.seed, out,
                            length_range=(c.length_min, c.length_max), noise_seconds=c.noise_seconds,
                            workers=config.training.threads)
    print(f"📁 {len(manifest.entries)} utterances written to {out}/manifest.tsv")
    return 0


def cmd_train_enhancer(args) -> int:
    config = _config(args)
    settings = start_run(config)
    try:
        manifest = prepare_corpus(config, settings.threads)
        train = [e.audio for e in load_examples(manifest, "train")]
        valid = [e.audio for e in load_examples(manifest, "valid")]
        noises = manifest.noise_waveforms("train")
        dcrn = build_dcrn(config.dcrn_config(), seed=config.seed)
        train_enhancer(dcrn, train, noises, config.augment_policy(), config.tri_stage(config.epochs.enhancer),
                       settings, valid_corpus=valid)
        heldout = manifest.noise_waveforms("heldout") or noises
        settings.run_logger.write_table("enhancer_sweep", evaluate_enhancer(dcrn, valid, heldout[0]))
        print(f"✅ Enhancer checkpoint: {settings.organizer.best_path(1, 'dcrn')}")
    finally:
        finalize_logging({"command": "train-enhancer"})
    return 0


def cmd_train_asr(args) -> int:
    config = _config(args)
    settings = start_run(config)
    try:
        manifest = prepare_corpus(config, settings.threads)
        vocabulary = manifest.vocabulary
        dcrn = _load(build_dcrn(config.dcrn_config()), args.enhancer) if args.enhancer else None
        init = _load(build_rnnt(config.rnnt_config(vocabulary.size)), args.init) if args.init else None
        options = AsrOptions(augment_noise=args.noise, augment_enhance=args.enhance, kl_pairs=args.kl_pairs,
                             init_from=init, train_on_enhanced=args.on_enhanced)
        rnnt = build_rnnt(config.rnnt_config(vocabulary.size), seed=config.seed)
        train_asr(rnnt, load_examples(manifest, "train"), config.augment_policy(),
                  config.tri_stage(config.epochs.asr), options, settings, vocabulary,
                  noise_corpus=manifest.noise_waveforms("train"), dcrn=dcrn,
                  valid=load_examples(manifest, "valid"), phase=args.phase)
        print(f"✅ RNN-T checkpoint: {settings.organizer.best_path(1, 'rnnt')}")
    finally:
        finalize_logging({"command": "train-asr", "phase": args.phase})
    return 0


def cmd_workflow(args) -> int:
    extra = ["training.use_selection=true"] if args.with_selection else []
    config = _config(args, extra)
    final = run_workflow(config, args.command)
    if final["workflow_status"] != "completed":
        failed = [k for k, r in final.get("critic_results", {}).items() if not r["is_valid"]]
        raise NumericalError(f"{args.command} stopped by training critics: {', '.join(failed)}")
    for label, rows in final.get("evaluations", {}).items():
        for row in rows:
            print(f"📊 {label} {row['split']}: WER {row['wer']:.2f}%  SI-SNR {row['si_snr']:.2f} dB")
    print(f"✅ Run directory: {config.run_dir}")
    return 0


def cmd_enhance(args) -> int:
    config = _config(args)
    manifest = _manifest(args, config)
    dcrn: EnhancementModel = _load(build_dcrn(config.dcrn_config()), args.enhancer)
    utterances = manifest.split(args.split)
    if not utterances:
        raise UsageError(f"split '{args.split}' is empty")
    out = Path(args.out)
    for utt in utterances:
        write_wav(out / f"{utt.id}.wav", enhance(dcrn, manifest.audio(utt)))
    print(f"✅ {len(utterances)} enhanced files written to {out}")
    return 0


def cmd_decode(args) -> int:
    config = _config(args)
    manifest = _manifest(args, config)
    recognizer = _recognizer(args, config, manifest)
    utterances = manifest.split(args.split)
    if not utterances:
        raise UsageError(f"split '{args.split}' is empty")
    lines = [f"{utt.id}\t{recognizer.transcribe(manifest.audio(utt))}\n" for utt in utterances]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text("".join(lines), encoding="utf-8")
    print(f"✅ {len(lines)} transcripts written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args)
    manifest = _manifest(args, config)
    recognizer = _recognizer(args, config, manifest)
    out = Path(args.out)
    _, summary = evaluate(recognizer, manifest, args.splits, out_dir=out, threads=config.training.threads)
    if recognizer.dcrn is not None:
        clean = [manifest.audio(u) for u in manifest.split("test-clean")]
        noises = manifest.noise_waveforms("heldout")
        if clean and noises:
            evaluate_enhancer(recognizer.dcrn, clean, noises[0]).to_csv(out / "enhancer_sweep.csv", index=False)
    print(summary.to_string(index=False))
    return 0


def cmd_werr(args) -> int:
    report = werr_from_summaries(args.base, args.new)
    table = werr_table(report)
    if args.out:
        table.to_csv(args.out, index=False)
    print(f"WERR clean {report.werr_clean:.2f}%  noisy {report.werr_noisy:.2f}%  average {report.werr_avg:.2f}%")
    return 0


def cmd_grad_check(args) -> int:
    results = run_grad_suite(seed=args.seed, dcrn=args.dcrn_preset)
    for r in results:
        print(f"{'✅' if r.passed else '❌'} {r.name:<24} max rel. error {r.max_relative_error:.3e}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericalError(f"gradient check failed: {', '.join(failed)}")
    return 0


def cmd_shapes(args) -> int:
    config = load_run_config(None, args.overrides, preset=args.preset)
    cfg = config.dcrn_config()
    chain = shape_plan(cfg)
    if config.dcrn.preset == "full" and tuple(chain) != FULL_CHAIN:
        raise ShapeError(f"full-size DCRN chain mismatch: {describe_chain(chain)}")
    for k, (channels, bins) in enumerate(chain):
        print(f"{k:2d}  ({channels}, {bins})")
    print(describe_chain(chain))
    print(f"DCRN parameters:      {cfg.parameter_count():,}")
    rnnt_cfg = config.rnnt_config()
    print(f"RNN-T parameters:     {rnnt_cfg.parameter_count():,}")
    if config.rnnt.preset == "full":
        print(f"RNN-T (6-layer):      {rnnt_preset('full_large').parameter_count():,}")
    print(f"Selection parameters: {config.selection_config().parameter_count():,}")
    return 0


COMMANDS = {
    "synth-data": cmd_synth_data,
    "train-enhancer": cmd_train_enhancer,
    "train-asr": cmd_train_asr,
    "three-step": cmd_workflow,
    "combined": cmd_workflow,
    "enhance": cmd_enhance,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "werr": cmd_werr,
    "grad-check": cmd_grad_check,
    "shapes": cmd_shapes,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point; returns the process exit code.
    """
    load_dotenv()
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except Exception as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        logger.debug("command failed", exc_info=True)
        print(f"Error: {message}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
