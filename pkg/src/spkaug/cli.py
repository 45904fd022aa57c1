"""Command-line entry point.

Subcommands: toy-corpus, augment, features, train-embed, select-embed,
train-tts, synth, eval, serve, gradcheck. Every command echoes its resolved
configuration (including seeds) before running; exit code 0 on success, 2 on
validation errors, 1 otherwise.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from . import corpus, dsp, embednet, evaluation, listentest, nncore, synth, trainer


def _echo(args):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    print("config: " + json.dumps(resolved, sort_keys=True, default=str))


def _factors(text):
    return [float(f) for f in text.split(",") if f]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_toy_corpus(args):
    manifest = corpus.make_toy_corpus(
        args.out, args.seed, args.speakers, args.dialects, args.channels,
        args.utts, dev_speakers=args.dev_speakers)
    print(f"wrote {len(manifest.records)} records to {args.out}/manifest.jsonl")
    return 0


def cmd_augment(args):
    manifest = corpus.load_manifest(args.manifest)
    augmented = corpus.vtlp_augment(
        manifest, _factors(args.factors),
        write_audio=not args.no_audio, audio_root=args.audio_root)
    corpus.save_manifest(augmented, args.out_manifest)
    print(f"{len(manifest.records)} -> {len(augmented.records)} records; "
          f"train speakers {len(manifest.speakers('train'))} -> "
          f"{len(augmented.speakers('train'))}")
    return 0


def cmd_features(args):
    manifest = corpus.load_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    root = args.audio_root or os.path.dirname(os.path.abspath(args.manifest))
    for r in manifest.records:
        wave = dsp.read_wav(os.path.join(root, r.audio_path))
        if wave.sample_rate != dsp.SAMPLE_RATE:
            wave = dsp.resample_rate(wave, dsp.SAMPLE_RATE)
        mel = dsp.mel_spectrogram(wave)
        dsp.save_mel(os.path.join(args.out_dir, f"{r.utt_id}.mel"), mel)
    print(f"extracted {len(manifest.records)} mel files into {args.out_dir}")
    return 0


def _load_mels(manifest, features_dir):
    return {r.utt_id: dsp.load_mel(
        os.path.join(features_dir, f"{r.utt_id}.mel")).frames
        for r in manifest.records}


def _encoder_filename(cfg, target):
    return f"{target}_dim{cfg.dim}_{cfg.pooling}_c{cfg.components}.ckpt"


def cmd_train_embed(args):
    manifest = corpus.load_manifest(args.manifest)
    mels = _load_mels(manifest, args.features_dir)
    configs = (embednet.sweep_grid() if args.sweep else
               [embednet.EmbeddingConfig(args.dim, args.pooling, args.components)])
    os.makedirs(args.out_dir, exist_ok=True)
    results = []
    for cfg in configs:
        if args.target == "dialect":
            enc, acc, _ = embednet.train_dialect_encoder(
                manifest, mels, cfg, args.epochs, args.seed, lr=args.lr)
        else:
            enc, acc, _ = embednet.train_speaker_encoder(
                manifest, mels, cfg, args.epochs, args.seed, lr=args.lr,
                angular_margin=args.angular)
        path = os.path.join(args.out_dir, _encoder_filename(cfg, args.target))
        enc.save(path)
        results.append({"config": cfg.label(), "path": path,
                        "train_accuracy": acc})
        print(f"{cfg.label()}: train accuracy {acc:.3f} -> {path}")
    with open(os.path.join(args.out_dir, f"{args.target}_results.json"), "w") as f:
        json.dump(results, f, indent=2)
    if args.export_embeddings:
        enc = embednet.Encoder.load(results[-1]["path"])
        key = ((lambda r: r.speaker_id) if args.target == "speaker"
               else (lambda r: r.utt_id))
        by_key = {}
        for r in manifest.records:
            by_key.setdefault(key(r), []).append(mels[r.utt_id])
        embeddings = [
            embednet.Embedding(np.mean(
                [embednet.embed(enc, m).vector for m in group], axis=0), k)
            for k, group in by_key.items()
        ]
        embednet.save_embeddings_csv(args.export_embeddings, embeddings)
        print(f"wrote {len(embeddings)} embeddings to {args.export_embeddings}")
    return 0


def cmd_select_embed(args):
    paths = sorted(glob.glob(os.path.join(args.encoders_dir, "*.ckpt")))
    if not paths:
        raise FileNotFoundError(f"no encoder checkpoints in {args.encoders_dir}")
    encoders = [embednet.Encoder.load(p) for p in paths]
    configs = [e.config for e in encoders]
    with open(args.pairs) as f:
        pair_paths = json.load(f)["pairs"]
    pairs = [(dsp.load_mel(a).frames, dsp.load_mel(b).frames)
             for a, b in pair_paths]
    ranked = embednet.rank_configs(configs, encoders, pairs)
    top = embednet.take_top(ranked, args.top)
    with open(args.out, "w") as f:
        f.write("rank,dim,pooling,components,mean_cosine\n")
        for i, r in enumerate(ranked):
            f.write(f"{i + 1},{r.config.dim},{r.config.pooling},"
                    f"{r.config.components},{r.mean_score:.6f}\n")
    for i, r in enumerate(top):
        print(f"DE{i + 1}: {r.config.label()} mean cosine {r.mean_score:.4f}")
    return 0


def cmd_train_tts(args):
    manifest = corpus.load_manifest(args.manifest)
    mels = _load_mels(manifest, args.features_dir)
    plans = [trainer.load_plan(p) for p in args.plans]
    speaker_embs = (embednet.load_embeddings_csv(args.speaker_emb)
                    if args.speaker_emb else None)
    dialect_embs = (embednet.load_embeddings_csv(args.dialect_emb)
                    if args.dialect_emb else None)
    lineage = trainer.run_schedule(plans, manifest, mels, speaker_embs,
                                   dialect_embs, out_dir=args.out_dir,
                                   log=print)
    for ckpt in lineage:
        print(f"phase {ckpt.phase}: best dev loss {min(ckpt.dev_history):.4f} "
              f"hash {ckpt.content_hash[:12]}")
    return 0


def cmd_synth(args):
    ckpt = trainer.PhasedCheckpoint.load(args.checkpoint)
    model = ckpt.model
    token_ids = synth.tokens_to_ids(args.text, model.config)
    conditioning = model.config.conditioning
    speaker_emb = dialect_emb = channel = None
    if "speaker" in conditioning:
        store = embednet.load_embeddings_csv(args.speaker_emb)
        speaker_emb = store[args.speaker].vector
    if "dialect" in conditioning:
        store = embednet.load_embeddings_csv(args.dialect_emb)
        dialect_emb = store[args.dialect].vector
    if "channel" in conditioning:
        corpus_list = args.corpus_list.split(",")
        channel = corpus.channel_onehot(args.channel, corpus_list)
    result = model.synthesize(token_ids, speaker_emb, dialect_emb, channel,
                              max_frames=args.max_frames)
    mel = dsp.MelSpectrogram(result.mel)
    wave = dsp.griffin_lim(mel, iterations=args.gl_iters, seed=args.seed)
    dsp.write_wav(args.out, wave)
    if args.save_mel:
        dsp.save_mel(args.save_mel, mel)
    focus = synth.attention_focus(result.attention)
    print(f"synthesized {result.mel.shape[0]} frames "
          f"(stop at {result.stop_frame}, attention focus {focus:.3f}) "
          f"-> {args.out}")
    if synth.is_alignment_failure(result.attention):
        print("warning: alignment failure (attention focus < 0.5)")
    return 0


def cmd_eval(args):
    ratings = evaluation.load_ratings_csv(args.ratings)
    with open(args.baselines) as f:
        baseline_map = json.load(f)
    os.makedirs(args.out_dir, exist_ok=True)
    for measure in ("mos", "dmos"):
        table = evaluation.mos_table(ratings, measure)
        marks = evaluation.significance_marks(table, baseline_map, args.alpha)
        report = evaluation.format_mos_report(table, marks)
        with open(os.path.join(args.out_dir, f"{measure}.txt"), "w") as f:
            f.write(report)
        evaluation.write_mos_csv(os.path.join(args.out_dir, f"{measure}.csv"),
                                 table, marks)
        print(report)
    if args.natural_system:
        systems = sorted({r.system_id for r in ratings})
        splits = sorted({r.split for r in ratings})
        distances = {}
        for system in systems:
            if system == args.natural_system:
                continue
            by_split = {}
            for split in splits:
                nat = [r for r in ratings
                       if r.system_id == args.natural_system and r.split == split]
                sys_r = [r for r in ratings
                         if r.system_id == system and r.split == split]
                if not nat or not sys_r:
                    continue
                by_split[split] = evaluation.confusion_distance(
                    evaluation.confusion_from_ratings(sys_r),
                    evaluation.confusion_from_ratings(nat),
                    normalize=not args.count_matrices)
            distances[system] = by_split
        report = evaluation.format_confusion_report(distances)
        with open(os.path.join(args.out_dir, "confusion.txt"), "w") as f:
            f.write(report)
        print(report)
    return 0


def cmd_serve(args):
    import uvicorn

    from .webapi import create_app

    plan = listentest.load_plan(args.plan)
    references = {}
    if args.references:
        with open(args.references) as f:
            references = json.load(f)
    service = listentest.ListenService(plan, args.store, references)
    app = create_app(service, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_gradcheck(args):
    from .verify import run_gradient_suite

    failures = run_gradient_suite(args.seed, verbose=True)
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spkaug",
        description="Speaker augmentation for multi-speaker TTS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-corpus", help="generate a synthetic corpus")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--dialects", type=int, default=2)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--utts", type=int, default=20)
    p.add_argument("--dev-speakers", type=int, default=0)
    p.set_defaults(func=cmd_toy_corpus)

    p = sub.add_parser("augment", help="VTLP speaker augmentation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--factors", default="0.9,1.1")
    p.add_argument("--out-manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--no-audio", action="store_true",
                   help="manifest-only augmentation")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("features", help="extract mel spectrograms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--audio-root", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train-embed", help="train speaker/dialect encoders")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--target", choices=["dialect", "speaker"], required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--sweep", action="store_true",
                   help="train the full hyperparameter grid")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--pooling", choices=["mean", "mean_std"], default="mean")
    p.add_argument("--components", type=int, default=32)
    p.add_argument("--angular", action="store_true",
                   help="angular-margin softmax (speaker target)")
    p.add_argument("--export-embeddings", default=None,
                   help="write per-speaker (or per-utt) embedding CSV")
    p.set_defaults(func=cmd_train_embed)

    p = sub.add_parser("select-embed", help="rank encoder configs by cosine")
    p.add_argument("--encoders-dir", required=True)
    p.add_argument("--pairs", required=True,
                   help='JSON {"pairs": [[synth.mel, gt.mel], ...]}')
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select_embed)

    p = sub.add_parser("train-tts", help="run the 4-phase warm-start schedule")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features-dir", required=True)
    p.add_argument("--plans", nargs="+", required=True)
    p.add_argument("--speaker-emb", default=None)
    p.add_argument("--dialect-emb", default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_train_tts)

    p = sub.add_parser("synth", help="synthesize text to a WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--speaker-emb", default=None)
    p.add_argument("--speaker", default=None)
    p.add_argument("--dialect-emb", default=None)
    p.add_argument("--dialect", default=None)
    p.add_argument("--channel", default=None,
                   help="channel label, e.g. the highest-quality corpus")
    p.add_argument("--corpus-list", default=None,
                   help="comma-separated corpus order for the one-hot")
    p.add_argument("--max-frames", type=int, default=200)
    p.add_argument("--gl-iters", type=int, default=60)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-mel", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="MOS/DMOS tables, significance, confusion")
    p.add_argument("--ratings", required=True)
    p.add_argument("--baselines", required=True,
                   help="JSON mapping system -> its baseline system")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--natural-system", default=None)
    p.add_argument("--count-matrices", action="store_true",
                   help="Frobenius over raw counts instead of proportions")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the listening-test service")
    p.add_argument("--plan", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--references", default=None,
                   help="JSON mapping accent category -> sample WAV path")
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    _echo(args)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, corpus.ManifestError,
            listentest.PlanError, trainer.PhaseError, dsp.DspError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - unexpected failure path
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
