"""Command-line entry points.

Subcommands cover the full pipeline: render or average probes, build the
synthetic dataset, train the relighting model and the probe VAE, generate
augmented variant pools, relight single images, run the matching metrics,
and benchmark inference latency.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import evalkit, vae
from .augment import relight_dataset
from .checkpoint import CheckpointError
from .imgio import load_png, resize_image, save_png
from .losses import FeatureExtractorSpec
from .manifest import DatasetManifest
from .model import ModelConfig, init_model
from .probes import ProbeSet, ProbeSpec, build_scene_agnostic_set, render_probe, save_probe
from .synth import build_toy_dataset, default_toy_specs
from .training import TrainConfig, fit, load_model


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _cmd_render_probes(args) -> int:
    payload = _load_json(args.spec)
    entries = payload["specs"] if isinstance(payload, dict) else payload
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, entry in enumerate(entries):
        entry = dict(entry)
        ill_id = int(entry.pop("id", k))
        probe = render_probe(ProbeSpec.from_dict(entry))
        probe.illumination_id = ill_id
        save_probe(probe, out / f"probe_{ill_id:02d}.png")
    print(f"rendered {len(entries)} probes -> {out}")
    return 0


def _cmd_avg_probes(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    probe_set = build_scene_agnostic_set(manifest)
    probe_set.save_dir(args.out)
    print(f"averaged {len(probe_set)} scene-agnostic probes -> {args.out}")
    return 0


def _cmd_synth_data(args) -> int:
    specs = default_toy_specs(n_lights=args.lights, probe_size=args.probe_size)
    manifest = build_toy_dataset(
        args.scenes, specs, args.out, seed=args.seed, size=args.size
    )
    print(
        f"wrote {len(manifest.scene_ids)} scenes x {len(manifest.illumination_ids)} "
        f"illuminations -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    config = _load_json(args.config)
    model_cfg = ModelConfig.from_dict(config.pop("model", {}))
    extractor_cfg = config.pop("extractor", None)
    extractor = (
        FeatureExtractorSpec.from_dict(extractor_cfg) if extractor_cfg else None
    )
    train_cfg = TrainConfig.from_dict(config)

    manifest = DatasetManifest.load(args.manifest)
    probe_set = ProbeSet.load_dir(args.probes)

    def progress(record: dict) -> None:
        val = record["val_total"]
        val_text = f"{val:.4f}" if val is not None else "n/a"
        print(
            f"epoch {record['epoch']:3d}  total {record['total']:.4f}  "
            f"val {val_text}  lr {record['lr']:.2e}"
        )

    result = fit(
        manifest,
        probe_set,
        model_cfg,
        train_cfg,
        args.out,
        extractor_spec=extractor,
        resume=args.resume,
        log_every=args.log_every,
        progress=progress,
    )
    print(f"checkpoints -> {result.last_path} (best: {result.best_path.name})")
    return 0


def _cmd_train_vae(args) -> int:
    config = vae.VaeConfig.from_dict(_load_json(args.config)) if args.config else vae.VaeConfig()
    probe_set = ProbeSet.load_dir(args.probes)
    corpus = vae.probe_corpus(probe_set, n_synthetic=args.synthetic, seed=config.seed)

    def progress(record: dict) -> None:
        print(
            f"epoch {record['epoch']:3d}  recon {record['recon_l1']:.4f}  "
            f"kl {record['kl']:.3f}"
        )

    model, _ = vae.train_vae(corpus, config, progress=progress)
    vae.save_vae(args.out, model)
    print(f"vae checkpoint -> {args.out}")
    return 0


def _cmd_sample_probe(args) -> int:
    model, _ = vae.load_vae(args.ckpt)
    z = np.asarray([float(v) for v in args.z.split(",")])
    probe = vae.sample_probe(model, z)
    save_png(probe.pixels, args.out)
    print(f"decoded probe -> {args.out}")
    return 0


def _cmd_augment(args) -> int:
    probe_set = ProbeSet.load_dir(args.probes)
    pool, errors = relight_dataset(
        args.ckpt, args.images, probe_set, args.out, overwrite=args.overwrite
    )
    n_variants = sum(len(v) - 1 for v in pool.variants.values())
    print(f"{len(pool.variants)} images x {len(probe_set)} probes -> {n_variants} variants")
    for err in errors:
        print(f"skipped {err['path']}: {err['error']}", file=sys.stderr)
    print(f"pool index -> {Path(args.out) / 'pool.json'}")
    return 0


def _cmd_relight(args) -> int:
    model, _ = load_model(args.ckpt)
    image = load_png(args.image)
    if image.shape[0] != model.config.input_size or image.shape[1] != model.config.input_size:
        image = np.clip(resize_image(image, model.config.input_size), 0.0, 1.0)
    guide = load_png(args.probe)
    if guide.shape[0] != model.config.probe_size:
        guide = np.clip(resize_image(guide, model.config.probe_size), 0.0, 1.0)
    predicted, relit = model.relight(image, guide)
    save_png(relit, args.out)
    if args.probe_out:
        save_png(predicted.pixels, args.probe_out)
    print(f"relit image -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = evalkit.EvalConfig(
        pixel_threshold=args.threshold,
        corner_eps=args.corner_eps,
        image_size=args.image_size,
    )
    report = evalkit.evaluate_pairs(args.pairs, args.mode, config)
    Path(args.report).write_text(json.dumps(report, indent=2), encoding="utf-8")
    print(json.dumps(report["aggregate"], indent=2))
    print(f"report -> {args.report}")
    return 0


def _cmd_bench(args) -> int:
    if args.ckpt:
        model, _ = load_model(args.ckpt)
    else:
        model = init_model(
            ModelConfig(input_size=args.size), seed=0
        )
    size = model.config.input_size
    rng = np.random.default_rng(0)
    image = rng.uniform(0.0, 1.0, size=(size, size, 3))
    guide = render_probe(ProbeSpec(azimuth_deg=45.0, elevation_deg=30.0,
                                   size=model.config.probe_size)).pixels
    model.relight(image, guide)  # warm-up
    times = []
    for _ in range(args.repeat):
        start = time.perf_counter()
        model.relight(image, guide)
        times.append(time.perf_counter() - start)
    mean_s = float(np.mean(times))
    print(
        f"single-image relighting at {size}x{size}: "
        f"mean {mean_s * 1e3:.1f} ms over {args.repeat} runs "
        f"(min {min(times) * 1e3:.1f} ms)"
    )
    if args.report:
        Path(args.report).write_text(
            json.dumps(
                {"size": size, "repeat": args.repeat, "mean_s": mean_s,
                 "min_s": float(min(times))},
                indent=2,
            ),
            encoding="utf-8",
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relight-aug",
        description="Probe-guided image relighting for data augmentation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render-probes", help="render shaded-sphere probes from a spec file")
    p.add_argument("--spec", required=True, help="JSON list of probe spec objects")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render_probes)

    p = sub.add_parser("avg-probes", help="average per-scene probes into a scene-agnostic set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_avg_probes)

    p = sub.add_parser("synth-data", help="generate the procedural toy dataset")
    p.add_argument("--scenes", type=int, default=32)
    p.add_argument("--lights", type=int, default=8)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--probe-size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train the relighting model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--config", required=True,
                   help="JSON with training fields plus optional 'model'/'extractor' blocks")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--log-every", type=int, default=0,
                   help="also log every Nth step, not just epoch ends")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("train-vae", help="train the probe VAE")
    p.add_argument("--probes", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--synthetic", type=int, default=200,
                   help="synthetic probes added to the corpus")
    p.set_defaults(func=_cmd_train_vae)

    p = sub.add_parser("sample-probe", help="decode a probe from a latent vector")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--z", required=True, help="comma-separated latent values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample_probe)

    p = sub.add_parser("augment", help="pre-generate relit variants for a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("relight", help="relight one image with a guide probe")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probe-out", default=None,
                   help="also write the probe predicted from the input image")
    p.set_defaults(func=_cmd_relight)

    p = sub.add_parser("eval", help="score exported keypoints/descriptors/homographies")
    p.add_argument("mode", choices=["mma", "homography", "pr"])
    p.add_argument("--pairs", required=True, help="pair manifest JSON")
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--corner-eps", type=float, default=3.0)
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="measure single-image relighting latency")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--repeat", type=int, default=10)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
