"""Command-line entry point.

Subcommands cover the whole pipeline: synth, prepare, caption, train-vae,
train-diffusion, train-evaluators, generate, evaluate, show-config. Exit
codes: 0 success, 1 fatal error, 2 partial success (some items failed but
the run completed). Every command drops a replay manifest (seed, config
hash, arguments) next to its outputs.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import captioning as cap
from . import conditioning as cond
from . import data as data_mod
from . import diffusion as diff
from . import evaluators as evals
from . import export
from . import figures
from . import metrics as metr
from . import pipeline
from . import vae as vae_mod
from .config import load_config
from .containers import read_motion, write_motion
from .features import pad_or_truncate, recover_positions

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _config_hash(config):
    blob = json.dumps(config.to_dict(), sort_keys=True, default=str)
    return hashlib.sha1(blob.encode()).hexdigest()


def _write_run_manifest(out_dir, command, args, config):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "seed": getattr(args, "seed", None),
        "config_hash": _config_hash(config),
        "profile": config.profile,
        "args": {k: v for k, v in vars(args).items() if k != "func" and not callable(v)},
    }
    with open(os.path.join(out_dir, f"{command.replace('-', '_')}_run.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2, default=str)
    return manifest


def _load_common_config(args):
    return load_config(
        path=getattr(args, "config", None),
        profile=getattr(args, "profile", None),
    )


def cmd_synth(args):
    config = _load_common_config(args)
    records = data_mod.synth_corpus(args.seed, args.gesture, "gesture",
                                    fps=config.data.fps,
                                    sample_rate=config.data.audio_sample_rate)
    records += data_mod.synth_corpus(args.seed + 1, args.motion, "motion",
                                     fps=config.data.fps)
    data_mod.save_corpus(records, args.out)
    _write_run_manifest(args.out, "synth", args, config)
    print(f"wrote {len(records)} clips to {args.out}")
    return EXIT_OK


def cmd_prepare(args):
    config = _load_common_config(args)
    report = data_mod.ingest(args.input, config.data)
    if not report.records:
        print("prepare: no usable records", file=sys.stderr)
        return EXIT_FATAL
    os.makedirs(args.out, exist_ok=True)

    train, val, test = data_mod.split(report.records, args.seed, config.data.split_ratios)
    for name, subset in (("train", train), ("val", val), ("test", test)):
        with open(os.path.join(args.out, f"{name}.txt"), "w") as f:
            for rec in sorted(r.clip_id for r in subset):
                f.write(rec + "\n")

    entries = [
        {
            "clip_id": r.clip_id,
            "dataset_tag": r.dataset_tag,
            "frames": r.valid_frames,
            "fps": r.motion.fps,
            "has_audio": r.audio is not None,
            "caption_count": len([c for c in r.local_captions if c]),
        }
        for r in report.records
    ]
    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump({"corpus": os.path.abspath(args.input), "clips": entries}, f,
                  sort_keys=True, indent=2)
    if report.errors:
        with open(os.path.join(args.out, "errors.json"), "w") as f:
            json.dump([{"path": p, "error": e} for p, e in report.errors], f, indent=2)
        for path, err in report.errors:
            print(f"prepare: skipped {path}: {err}", file=sys.stderr)
    _write_run_manifest(args.out, "prepare", args, config)
    print(f"prepared {len(report.records)} records "
          f"({len(train)}/{len(val)}/{len(test)} train/val/test, "
          f"{len(report.errors)} errors)")
    return EXIT_OK


def _load_split(corpus_dir, split_dir, config, split=None):
    report = data_mod.ingest(corpus_dir, config.data)
    records = report.records
    if split and split_dir:
        path = os.path.join(split_dir, f"{split}.txt")
        with open(path) as f:
            wanted = {line.strip() for line in f if line.strip()}
        records = [r for r in records if r.clip_id in wanted]
    return records, report.errors


def cmd_caption(args):
    config = _load_common_config(args)
    if args.strategy:
        config.captioning.strategy = args.strategy
    records, _errors = _load_split(args.corpus, None, config)
    if not records:
        print("caption: no records", file=sys.stderr)
        return EXIT_FATAL

    cache = cap.CaptionCache(args.cache)
    if args.backend == "stub":
        captioner = cap.StubCaptioner()
    else:
        try:
            captioner = cap.RemoteCaptioner(base_url=args.url)
        except ValueError as exc:
            print(f"caption: {exc}", file=sys.stderr)
            return EXIT_FATAL

    calls = pipeline.caption_records(
        records, config.captioning, cache=cache, seed=args.seed, captioner=captioner
    )
    cache.save(args.cache)
    data_mod.save_corpus(records, args.corpus)

    gesture = [r for r in records if r.dataset_tag == "gesture"]
    missing = [r.clip_id for r in gesture if not any(r.local_captions)]
    kept = sum(1 for r in gesture for c in r.local_captions if c)
    print(f"captioned {len(gesture)} gesture clips: {kept} local captions kept, "
          f"{calls} backend calls, cache size {len(cache)}")
    if missing:
        print(f"caption: {len(missing)} clips ended caption-free", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train_vae(args):
    config = _load_common_config(args)
    if args.epochs:
        config.vae.epochs = args.epochs
    records, _ = _load_split(args.corpus, args.splits, config, "train" if args.splits else None)
    if not records:
        print("train-vae: no training records", file=sys.stderr)
        return EXIT_FATAL
    feats, masks = pipeline.stack_training_arrays(records, config.data.target_frames)
    model, scaler, history = vae_mod.train_vae(
        feats, masks, config.vae, seed=args.seed, log_every=args.log_every
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    vae_mod.save_vae(args.out, model, scaler, config.vae, args.seed, history)
    export.write_loss_csv(os.path.join(out_dir, "vae_loss.csv"), history)
    figures.save_loss_curve(history, os.path.join(out_dir, "vae_loss.png"),
                            title="gesture VAE training")
    _write_run_manifest(out_dir, "train-vae", args, config)
    print(f"vae trained {len(history)} epochs, final loss {history[-1]['loss']:.5f} "
          f"(recon {history[-1]['recon']:.5f})")
    return EXIT_OK


def cmd_train_diffusion(args):
    config = _load_common_config(args)
    if args.epochs:
        config.diffusion.epochs = args.epochs
    if not os.path.exists(args.vae):
        print(f"train-diffusion: VAE checkpoint {args.vae} not found", file=sys.stderr)
        return EXIT_FATAL
    vae_model, feat_scaler, _meta = vae_mod.load_vae(args.vae)

    records, _ = _load_split(args.corpus, args.splits, config, "train" if args.splits else None)
    if not records:
        print("train-diffusion: no training records", file=sys.stderr)
        return EXIT_FATAL

    cache = cap.CaptionCache(args.cache) if args.cache else None
    pipeline.caption_records(records, config.captioning, cache=cache, seed=args.seed)

    text_enc = cond.StubTextEncoder()
    audio_enc = cond.StubAudioEncoder(motion_fps=config.data.fps)
    cond_sets = [
        pipeline.build_condition_set(r, text_enc, audio_enc, config.captioning.segment_len)
        for r in records
    ]
    feats, masks = pipeline.stack_training_arrays(records, config.data.target_frames)
    latents = pipeline.encode_latents(vae_model, feat_scaler, feats, masks)

    model, lat_scaler, history = diff.train_diffusion(
        latents, cond_sets, config.diffusion, seed=args.seed, log_every=args.log_every
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    diff.save_denoiser(args.out, model, lat_scaler, config.diffusion, args.seed, history)
    export.write_loss_csv(os.path.join(out_dir, "diffusion_loss.csv"), history)
    figures.save_loss_curve(history, os.path.join(out_dir, "diffusion_loss.png"),
                            title="latent diffusion training")
    _write_run_manifest(out_dir, "train-diffusion", args, config)
    print(f"denoiser trained {len(history)} epochs, final loss {history[-1]['loss']:.5f}")
    return EXIT_OK


def cmd_train_evaluators(args):
    config = _load_common_config(args)
    records, _ = _load_split(args.corpus, args.splits, config, "train" if args.splits else None)
    if not records:
        print("train-evaluators: no records", file=sys.stderr)
        return EXIT_FATAL
    os.makedirs(args.out, exist_ok=True)
    feats, _masks = pipeline.stack_training_arrays(records, config.data.target_frames)

    fgd_model, fgd_hist = evals.train_fgd_extractor(
        feats, latent_dim=config.metrics.fgd_latent_dim,
        channels=config.metrics.fgd_channels, epochs=config.metrics.fgd_epochs,
        batch_size=config.metrics.evaluator_batch, lr=config.metrics.evaluator_lr,
        seed=args.seed,
    )
    evals.save_evaluator(os.path.join(args.out, "fgd.npz"), fgd_model, fgd_hist, args.seed)

    pipeline.caption_records(records, config.captioning, seed=args.seed)
    text_enc = cond.StubTextEncoder()
    captioned = [r for r in records if r.global_caption or any(r.local_captions or [])]
    feats_p, _ = pipeline.stack_training_arrays(captioned, config.data.target_frames)
    texts = np.asarray([
        cond.embed_text(
            r.global_caption or next(c for c in r.local_captions if c), text_enc
        ).vector
        for r in captioned
    ])
    co_model, co_hist = evals.train_coembedding(
        feats_p, texts, embed_dim=config.metrics.coembed_dim,
        epochs=config.metrics.coembed_epochs,
        batch_size=config.metrics.evaluator_batch, lr=config.metrics.evaluator_lr,
        seed=args.seed,
    )
    evals.save_evaluator(os.path.join(args.out, "coembed.npz"), co_model, co_hist, args.seed)
    _write_run_manifest(args.out, "train-evaluators", args, config)
    print(f"evaluators saved to {args.out} "
          f"(fgd loss {fgd_hist[-1]['loss']:.5f}, coembed loss {co_hist[-1]['loss']:.5f})")
    return EXIT_OK


def cmd_generate(args):
    config = _load_common_config(args)
    for path, name in ((args.vae, "VAE"), (args.denoiser, "denoiser")):
        if not os.path.exists(path):
            print(f"generate: {name} checkpoint {path} not found", file=sys.stderr)
            return EXIT_FATAL
    vae_model, feat_scaler, vae_meta = vae_mod.load_vae(args.vae)
    denoiser, lat_scaler, dsettings, _meta = diff.load_denoiser(args.denoiser)

    audio = None
    sr = config.data.audio_sample_rate
    if args.audio:
        audio, sr = data_mod.read_wav(args.audio)

    from .skeleton import build_default_skeleton

    skeleton = build_default_skeleton()
    if vae_meta["feature_dim"] != skeleton.feature_dim:
        print("generate: checkpoint feature width does not match the default rig",
              file=sys.stderr)
        return EXIT_FATAL

    request = pipeline.GenerationRequest(
        captions=args.caption or [], audio=audio, sample_rate=sr,
        frames=args.frames, audio_scale=args.s1, caption_scale=args.s2,
        seed=args.seed, inference_steps=dsettings.inference_steps,
    )
    schedule = diff.NoiseSchedule.linear(
        dsettings.train_steps, dsettings.beta_start, dsettings.beta_end
    )
    result = pipeline.generate(
        vae_model, feat_scaler, denoiser, lat_scaler, request,
        skeleton=skeleton, fps=config.data.fps, schedule=schedule,
    )

    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"gen_{args.seed:05d}")
    write_motion(stem + ".motion", result.motion)
    manifest = dict(result.manifest)
    if args.audio:
        manifest["audio_path"] = os.path.abspath(args.audio)
    pipeline.save_generation_manifest(stem + ".manifest.json", manifest)

    if args.render:
        positions = recover_positions(result.motion)
        export.write_positions_csv(stem + ".positions.csv", positions, skeleton,
                                   config.data.fps)
        export.write_animation(stem + ".anim", positions, skeleton, config.data.fps)
        figures.save_pose_strip(positions, skeleton, stem + ".poses.png",
                                title="generated motion")
        figures.save_trajectory_figure(positions, skeleton, stem + ".trajectory.png")
    _write_run_manifest(args.out, "generate", args, config)
    print(f"wrote {stem}.motion ({result.motion.frame_count} frames)")
    return EXIT_OK


def _load_generated(gen_dir):
    """Generated containers plus their replay manifests."""
    out = []
    for name in sorted(os.listdir(gen_dir)):
        if not name.endswith(".motion"):
            continue
        stem = os.path.join(gen_dir, name[: -len(".motion")])
        seq = read_motion(stem + ".motion")
        manifest = {}
        if os.path.exists(stem + ".manifest.json"):
            with open(stem + ".manifest.json") as f:
                manifest = json.load(f)
        out.append((seq, manifest))
    return out


def cmd_evaluate(args):
    config = _load_common_config(args)
    gen = _load_generated(args.gen)
    if not gen:
        print("evaluate: no generated motions found", file=sys.stderr)
        return EXIT_FATAL
    ref_report = data_mod.ingest(args.ref, config.data)
    if not ref_report.records:
        print("evaluate: no reference records", file=sys.stderr)
        return EXIT_FATAL

    target = config.data.target_frames
    gen_feats = []
    for seq, _m in gen:
        padded, _ = pad_or_truncate(seq, target)
        gen_feats.append(padded.features)
    gen_feats = np.asarray(gen_feats)
    ref_feats, _ = pipeline.stack_training_arrays(ref_report.records, target)

    fgd_model = coembed = None
    skipped = {}
    if args.fgd and os.path.exists(args.fgd):
        fgd_model, _ = evals.load_evaluator(args.fgd)
    elif args.fgd:
        skipped["fgd"] = f"checkpoint {args.fgd} missing"
    else:
        skipped["fgd"] = "no extractor checkpoint supplied"
    if args.coembed and os.path.exists(args.coembed):
        coembed, _ = evals.load_evaluator(args.coembed)
    elif args.coembed:
        skipped["text_metrics"] = f"checkpoint {args.coembed} missing"
    else:
        skipped["text_metrics"] = "no co-embedding checkpoint supplied"

    text_enc = cond.StubTextEncoder()
    captions = []
    for _seq, manifest in gen:
        caps = manifest.get("captions") or []
        captions.append(" ".join(caps) if caps else None)

    runs = {}

    def push(name, value):
        runs.setdefault(name, []).append(value)

    seeds = [args.seed + i for i in range(args.runs)]
    for run_seed in seeds:
        rng = np.random.default_rng(run_seed)
        pick = rng.choice(len(gen), size=min(len(gen), 32), replace=False)
        jerks, accels = [], []
        for i in pick:
            positions = recover_positions(gen[i][0])
            j, a = metr.jerk_accel(positions, gen[i][0].fps)
            jerks.append(j)
            accels.append(a)
        push("jerk", float(np.mean(jerks)))
        push("accel", float(np.mean(accels)))
        push("l1_diversity", metr.l1_diversity(gen_feats[pick]))

        if fgd_model is not None:
            ref_pick = rng.choice(len(ref_feats), size=min(len(ref_feats), 64), replace=False)
            push("fgd", metr.fgd(ref_feats[ref_pick], gen_feats, fgd_model))

        if coembed is not None and all(c for c in captions):
            text_vecs = [cond.embed_text(c, text_enc).vector for c in captions]
            pool = min(config.metrics.rprecision_pool, len(gen))
            block = metr.fid_mmdist_div_rprec(
                gen_feats, ref_feats, text_vecs, coembed,
                div_subset_size=config.metrics.diversity_subset,
                rprec_pool_size=pool, rng=rng,
            )
            push("fid", block["fid"])
            push("mm_dist", block["mm_dist"])
            push("div", block["diversity"])
            push("r_precision_top1", block["r_precision_top1"])

    report = metr.report(runs, seeds=seeds)
    payload = report.to_dict()
    for name, reason in skipped.items():
        payload[name] = {"status": "skipped", "reason": reason}
    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    with open(args.out, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)

    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    export.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), report)
    figures.save_metric_report_figure(report, os.path.join(out_dir, "metrics.png"))
    _write_run_manifest(out_dir, "evaluate", args, config)

    width = max(len(n) for n in report.means)
    for name in sorted(report.means):
        mean, ci = report.row(name)
        ci_txt = f" ± {ci:.4f}" if ci is not None else ""
        print(f"{name:<{width}}  {mean:.4f}{ci_txt}")
    for name, reason in skipped.items():
        print(f"{name:<{width}}  skipped ({reason})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gesturegen",
        description="caption- and audio-conditioned gesture generation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (supports include:)")
        p.add_argument("--profile", choices=["paper", "desk"], help="config profile")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="write a synthetic desk-scale corpus")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--gesture", type=int, default=20)
    p.add_argument("--motion", type=int, default=20)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="ingest a corpus and write splits")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("caption", help="caption gesture records")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--strategy", choices=["regular", "dynamic", "hierarchical"])
    p.add_argument("--backend", choices=["stub", "remote"], default="stub")
    p.add_argument("--cache", required=True)
    p.add_argument("--url", help="remote captioner base URL (or env var)")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("train-vae", help="train the gesture VAE")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits", help="directory with train/val/test.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override config epochs")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_vae)

    p = sub.add_parser("train-diffusion", help="train the latent denoiser")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits")
    p.add_argument("--vae", required=True, help="trained VAE checkpoint")
    p.add_argument("--cache", help="caption cache file")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_diffusion)

    p = sub.add_parser("train-evaluators", help="train FGD extractor and co-embedding")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--splits")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_evaluators)

    p = sub.add_parser("generate", help="generate motion from captions/audio")
    common(p)
    p.add_argument("--vae", required=True)
    p.add_argument("--denoiser", required=True)
    p.add_argument("--caption", action="append", help="caption text (repeatable)")
    p.add_argument("--audio", help="conditioning speech wav")
    p.add_argument("--frames", type=int, default=180)
    p.add_argument("--s1", type=float, default=7.0, help="audio guidance scale")
    p.add_argument("--s2", type=float, default=0.75, help="caption guidance scale")
    p.add_argument("--out", required=True)
    p.add_argument("--render", action="store_true",
                   help="also write positions CSV, .anim and figures")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated motion against references")
    common(p)
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--fgd", help="FGD extractor checkpoint")
    p.add_argument("--coembed", help="co-embedding checkpoint")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("show-config", help="print the resolved configuration")
    common(p)
    p.set_defaults(func=cmd_show_config)
    return parser


def cmd_show_config(args):
    config = _load_common_config(args)
    print(json.dumps(config.to_dict(), sort_keys=True, indent=2, default=str))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
