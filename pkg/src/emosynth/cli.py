"""Command-line entry point.

Subcommands follow the documented run order: gen-corpus, prepare-corpus,
train-ranker, extract-strengths, train-classifier, train-tts, synthesize,
eval-mcd, plot-f0. Every run logs its resolved configuration and seed, and
every command that produces output writes a ``produced_files.txt`` manifest
into its output directory. Configuration comes from a flat key=value file
(``--config`` or the EMOSYNTH_CONFIG environment variable) with command-line
flags taking precedence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import acoustic, classifier as clf, corpus as corpus_mod, evaluate, inference, pipeline, ranker as ranker_mod
from .config import RunConfig, load_run_config

log = logging.getLogger("emosynth")


class CliError(RuntimeError):
    pass


def _write_produced(out_dir: Path, paths: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    listing = out_dir / "produced_files.txt"
    rel = []
    for p in paths:
        try:
            rel.append(str(Path(p).resolve().relative_to(out_dir.resolve())))
        except ValueError:
            rel.append(str(p))
    listing.write_text("\n".join(rel) + "\n", encoding="utf-8")


def _load_corpus(corpus_dir: str) -> tuple[corpus_mod.CorpusManifest, list[corpus_mod.Utterance]]:
    manifest_path = Path(corpus_dir) / "manifest.tsv"
    if not manifest_path.is_file():
        raise CliError(f"no corpus manifest at {manifest_path}; run gen-corpus or prepare-corpus first")
    manifest = corpus_mod.load_manifest(manifest_path)
    return manifest, corpus_mod.load_corpus(manifest)


def _check_corpus_matches_config(
    manifest: corpus_mod.CorpusManifest, utterances: list[corpus_mod.Utterance], cfg: RunConfig
) -> None:
    if len(manifest.category_names) != cfg.n_categories:
        raise CliError(
            f"corpus has {len(manifest.category_names)} categories but config says {cfg.n_categories}"
        )
    bins = utterances[0].mel.shape[1]
    if bins != cfg.mel_bins:
        raise CliError(f"corpus mel_bins {bins} does not match config {cfg.mel_bins}")
    max_id = max(max(u.phonemes.ids) for u in utterances)
    if max_id >= cfg.vocab_size:
        raise CliError(f"corpus phoneme id {max_id} outside config vocabulary {cfg.vocab_size}")


def _ranker_bank_from_dir(rankers_dir: str, manifest: corpus_mod.CorpusManifest) -> dict[int, ranker_mod.RankingModel]:
    bank: dict[int, ranker_mod.RankingModel] = {}
    for path in sorted(Path(rankers_dir).glob("*.rank")):
        model = ranker_mod.load_ranker(path)
        bank[model.emotion] = model
    if not bank:
        raise CliError(f"no .rank files found in {rankers_dir}")
    return bank


def _strength_spec_from_flag(raw: str) -> inference.StrengthSpec:
    kind, _, payload = raw.partition(":")
    if kind == "constant":
        try:
            return inference.StrengthSpec.constant(float(payload))
        except ValueError as exc:
            raise CliError(f"bad constant strength {payload!r}") from exc
    if kind == "ramp_up":
        return inference.StrengthSpec.ramp_up()
    if kind == "ramp_down":
        return inference.StrengthSpec.ramp_down()
    if kind == "explicit":
        try:
            values = [float(v) for v in payload.split(",") if v]
        except ValueError as exc:
            raise CliError(f"bad explicit strengths {payload!r}") from exc
        return inference.StrengthSpec.explicit(values)
    raise CliError(f"unknown strength spec {raw!r} (use constant:v, ramp_up, ramp_down, explicit:csv)")


def _utterance_by_id(utterances: list[corpus_mod.Utterance], uid: str) -> corpus_mod.Utterance:
    for u in utterances:
        if u.id == uid:
            return u
    raise CliError(f"utterance id {uid!r} not in corpus")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args: argparse.Namespace, cfg: RunConfig) -> int:
    out_dir = Path(args.out)
    corpus = corpus_mod.generate_synthetic_corpus(cfg.seed, cfg.n_per_emotion)
    manifest_path = corpus_mod.write_corpus(
        corpus, corpus_mod.SyntheticConfig().category_names, out_dir
    )
    produced = [manifest_path]
    produced += sorted((out_dir / "mels").glob("*.mel"))
    _write_produced(out_dir, produced)
    log.info("wrote %d utterances under %s", len(corpus), out_dir)
    return 0


def cmd_prepare_corpus(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = corpus_mod.load_manifest(args.manifest)
    utterances = corpus_mod.load_corpus(manifest)
    counts: dict[str, int] = {}
    for entry in manifest.entries:
        counts[entry.emotion_label] = counts.get(entry.emotion_label, 0) + 1
    log.info("manifest OK: %d utterances, categories: %s", len(utterances), ", ".join(manifest.category_names))
    for label in manifest.category_names:
        log.info("  %s: %d", label, counts.get(label, 0))
    return 0


def cmd_train_ranker(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    settings = pipeline.RankerSettings(
        C=cfg.ranker_c, tol=cfg.ranker_tol, max_iter=cfg.ranker_max_iter,
        max_pairs=cfg.max_pairs, seed=cfg.seed,
    )
    neutral = manifest.neutral_id
    if args.emotion != "all":
        if args.emotion not in manifest.category_names:
            raise CliError(f"unknown emotion {args.emotion!r}")
        targets = [manifest.category_id(args.emotion)]
    else:
        targets = [i for i in range(len(manifest.category_names)) if i != neutral]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    produced = []
    for emotion in targets:
        model = pipeline.train_emotion_ranker(utterances, emotion, neutral, settings)
        label = manifest.category_names[emotion]
        rank_path = out_dir / f"{label}.rank"
        text_path = out_dir / f"{label}.rank.txt"
        ranker_mod.save_ranker(model, rank_path)
        ranker_mod.export_ranker_text(model, text_path)
        produced += [rank_path, text_path]
        log.info("trained ranker for %s", label)
    _write_produced(out_dir, produced)
    return 0


def cmd_extract_strengths(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    bank = _ranker_bank_from_dir(args.rankers, manifest)
    strengths = pipeline.extract_corpus_strengths(utterances, bank, manifest.neutral_id)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{uid}\t" + ",".join(f"{v:.8f}" for v in seq.per_syllable)
        for uid, seq in strengths.items()
    ]
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("wrote strengths for %d utterances to %s", len(strengths), out_path)
    return 0


def load_strengths_file(path: str | Path, utterances: list[corpus_mod.Utterance]) -> dict[str, ranker_mod.StrengthSequence]:
    by_id = {u.id: u for u in utterances}
    strengths: dict[str, ranker_mod.StrengthSequence] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        uid, _, payload = line.partition("\t")
        if uid not in by_id:
            continue
        per_syllable = np.array([float(v) for v in payload.split(",")])
        per_phoneme = corpus_mod.expand_syllable_strengths(per_syllable, by_id[uid].syllables)
        strengths[uid] = ranker_mod.StrengthSequence(per_syllable=per_syllable, per_phoneme=per_phoneme)
    return strengths


def cmd_train_classifier(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    model = pipeline.train_text_classifier(utterances, manifest.category_names, seed=cfg.seed)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    clf.save_classifier(model, out_path)
    log.info("wrote classifier to %s", out_path)
    return 0


def cmd_train_tts(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    _check_corpus_matches_config(manifest, utterances, cfg)
    strengths = load_strengths_file(args.strengths, utterances)
    missing = [u.id for u in utterances if u.id not in strengths]
    if missing:
        raise CliError(f"strengths file misses {len(missing)} utterances (first: {missing[0]})")
    result = pipeline.train_tts(
        utterances,
        strengths,
        cfg.to_model_config(),
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        seed=cfg.seed,
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    acoustic.save_checkpoint(
        result.model, out_path, step=cfg.steps, seed=cfg.seed, prior_means=result.prior_means
    )
    log.info(
        "trained %d steps, final L_total=%.5f, checkpoint at %s",
        cfg.steps, result.losses[-1]["L_total"], out_path,
    )
    return 0


def cmd_synthesize(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    model, info = acoustic.load_checkpoint(args.checkpoint)
    target = _utterance_by_id(utterances, args.utterance)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.mode == "transfer":
        if not args.reference:
            raise CliError("--reference is required for transfer mode")
        reference = _utterance_by_id(utterances, args.reference)
        ranker_model = None
        if reference.emotion != manifest.neutral_id:
            if not args.rankers:
                raise CliError("--rankers is required for a non-neutral reference")
            bank = _ranker_bank_from_dir(args.rankers, manifest)
            if reference.emotion not in bank:
                raise CliError(f"no ranker for emotion {manifest.category_names[reference.emotion]}")
            ranker_model = bank[reference.emotion]
        result = inference.synth_transfer(
            model, target.phonemes, target.syllables, reference, ranker_model
        )
    elif args.mode == "predict":
        if not args.classifier:
            raise CliError("--classifier is required for predict mode")
        classifier_model = clf.load_classifier(args.classifier)
        result = inference.synth_predict(model, target.text, target.phonemes, classifier_model)
    elif args.mode == "control":
        if not args.emotion:
            raise CliError("--emotion is required for control mode")
        if args.emotion not in manifest.category_names:
            raise CliError(f"unknown emotion {args.emotion!r}")
        category = manifest.category_id(args.emotion)
        spec = _strength_spec_from_flag(args.strengths)
        prior = info.prior_means.get(category)
        if prior is None:
            raise CliError(f"checkpoint has no prior mean for {args.emotion}; retrain with train-tts")
        result = inference.synth_control(
            model, target.phonemes, target.syllables, category, spec, prior
        )
    else:
        raise CliError(f"unknown mode {args.mode!r}")

    if not result.stopped:
        log.warning("decode hit the max-step limit; output is partial")
    mel_path = out_dir / f"{target.id}_{args.mode}.mel"
    corpus_mod.write_mel(mel_path, result.mel)
    curves = [("synthesized", evaluate.f0_proxy_curve(result.mel))]
    if args.mode == "transfer":
        curves.append(("reference", evaluate.f0_proxy_curve(reference.mel)))
    png_path = out_dir / f"{target.id}_{args.mode}_f0.png"
    evaluate.emit_curve_plot(curves, png_path, title=f"F0 proxy ({args.mode})")
    _write_produced(out_dir, [mel_path, png_path])
    log.info("wrote %s (%d frames) and %s", mel_path, result.mel.shape[0], png_path)
    return 0


def cmd_eval_mcd(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest, utterances = _load_corpus(args.corpus)
    model, _ = acoustic.load_checkpoint(args.checkpoint)
    bank = _ranker_bank_from_dir(args.rankers, manifest)
    neutral = manifest.neutral_id
    targets = [u for u in utterances if u.emotion != neutral]
    if args.limit:
        targets = targets[: args.limit]
    if not targets:
        raise CliError("no emotional utterances to evaluate")
    entries = []
    for utterance in targets:
        result = inference.synth_transfer(
            model, utterance.phonemes, utterance.syllables, utterance, bank[utterance.emotion]
        )
        entries.append(
            (utterance.id, manifest.category_names[utterance.emotion], result.mel, np.asarray(utterance.mel))
        )
    report = evaluate.build_mcd_report(entries)
    produced = evaluate.write_mcd_report(report, args.out)
    _write_produced(Path(args.out), produced)
    log.info("parallel-transfer MCD over %d utterances: %.3f dB", len(entries), report.overall_mean)
    return 0


def cmd_plot_f0(args: argparse.Namespace, cfg: RunConfig) -> int:
    curves = []
    for mel_path in args.mel:
        mel = corpus_mod.read_mel(mel_path)
        curves.append((Path(mel_path).stem, evaluate.f0_proxy_curve(mel)))
    out_path = Path(args.out)
    evaluate.emit_curve_plot(curves, out_path)
    _write_produced(out_path.parent, [out_path])
    log.info("wrote %s", out_path)
    return 0


# ---------------------------------------------------------------------------
# Parser / dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emosynth",
        description="Multi-scale emotional speech synthesis toolkit (mel domain)",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", parents=[common], help="generate the synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-per-emotion", type=int, dest="n_per_emotion")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("prepare-corpus", parents=[common], help="validate a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_prepare_corpus)

    p = sub.add_parser("train-ranker", parents=[common], help="train per-emotion strength rankers")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emotion", default="all")
    p.set_defaults(func=cmd_train_ranker)

    p = sub.add_parser("extract-strengths", parents=[common], help="extract per-syllable strengths")
    p.add_argument("--corpus", required=True)
    p.add_argument("--rankers", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_strengths)

    p = sub.add_parser("train-classifier", parents=[common], help="train the text emotion classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-tts", parents=[common], help="train the acoustic model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--strengths", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train_tts)

    p = sub.add_parser("synthesize", parents=[common], help="synthesize mel frames")
    p.add_argument("--mode", required=True, choices=("transfer", "predict", "control"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--utterance", required=True, help="corpus id providing target phonemes and spans")
    p.add_argument("--reference", help="reference utterance id (transfer mode)")
    p.add_argument("--rankers", help="ranker directory (transfer mode)")
    p.add_argument("--classifier", help="classifier file (predict mode)")
    p.add_argument("--emotion", help="emotion label (control mode)")
    p.add_argument("--strengths", default="constant:0.5", help="constant:v|ramp_up|ramp_down|explicit:csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("eval-mcd", parents=[common], help="parallel-transfer MCD report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rankers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_eval_mcd)

    p = sub.add_parser("plot-f0", parents=[common], help="plot F0 proxy curves from mel files")
    p.add_argument("--mel", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_f0)
    return parser


def dispatch(argv: list[str]) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "n_per_emotion", None) is not None:
        overrides["n_per_emotion"] = args.n_per_emotion
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    try:
        cfg = load_run_config(args.config, overrides)
        # single-threaded math keeps repeated runs bit-identical
        torch.set_num_threads(1)
        torch.manual_seed(cfg.seed)
        log.info("resolved config: %s", cfg.describe())
        return args.func(args, cfg)
    except (CliError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
