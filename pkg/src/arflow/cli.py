"""Command-line surface: gen-data, train, sample, eval, verify.

Every command that writes artifacts also writes ``<out>.manifest.json``
recording the resolved configuration, seeds, input/output checksums, and
wall-clock time; re-running with the same flags reproduces the artifact
checksums exactly (the manifest's wall-clock field aside).

Exit codes: 0 success; 1 verify found failing properties; 2 configuration
error; 3 non-finite training loss; 4 model/data mismatch while sampling;
5 empty evaluation input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import data as dt
from . import flowpath as fp
from . import metrics as mx
from . import model as mdl
from . import sampler as smp
from . import selfcheck
from .errors import (
    ArflowError,
    EmptyInput,
    InvalidConfig,
    NonFiniteLoss,
    SchemaError,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NONFINITE = 3
EXIT_SCHEMA = 4
EXIT_EMPTY = 5


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_manifest(out_path: str, command: str, config: dict,
                    inputs: list[str], outputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "config": {k: v for k, v in config.items() if k not in ("func", "command")},
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "wall_clock_s": round(time.time() - started, 3),
    }
    _atomic_write(out_path + ".manifest.json", json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    started = time.time()
    samples = dt.generate_mixed(args.pairs, frames=args.frames, joints=args.joints,
                                noise=args.noise,
                                contact_fraction=args.contact_fraction,
                                seed=args.seed, scenario=args.scenario)
    skel = dt.default_skeleton(args.joints)
    dt.save_samples(args.out, samples, skel, fps=args.fps)
    _write_manifest(args.out, "gen-data", vars(args), [], [args.out], started)
    print(f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    started = time.time()
    samples, skel = dt.load_samples(args.data)
    if not samples:
        raise InvalidConfig(f"no samples in {args.data}")
    train_split, _ = dt.train_test_split(samples)
    cond_vocab = 0 if args.unconditioned else len(dt.SCENARIOS)
    dataset = [(s.actor, s.reactor, None if args.unconditioned else s.label)
               for s in train_split]
    h = dataset[0][0].shape[0]
    pcfg = mdl.PredictorConfig(frame_dim=skel.motion_dim, max_frames=h,
                               layers=args.layers, width=args.width,
                               heads=args.heads, causal=args.causal,
                               cond_vocab=cond_vocab,
                               prediction_mode=args.prediction)
    tcfg = mdl.TrainConfig(steps=args.steps, batch_size=args.batch,
                           learning_rate=args.lr, lambda_inter=args.lambda_inter,
                           sigma_min=args.sigma_min, t_grid=args.t_grid,
                           cond_dropout_prob=args.cond_dropout, seed=args.seed)
    params, history = mdl.train(dataset, skel, pcfg, tcfg,
                                log_every=args.log_every)
    params.meta = {"sigma_min": tcfg.sigma_min, "steps": tcfg.steps,
                   "seed": tcfg.seed, "train_samples": len(dataset)}
    mdl.save_params(args.out, params)
    loss_path = args.out + ".loss.csv"
    _atomic_write(loss_path, "".join(
        f"{i},{fm!r},{inter!r},{total!r}\n"
        for i, (fm, inter, total) in enumerate(history)))
    _write_manifest(args.out, "train", vars(args), [args.data],
                    [args.out, loss_path], started)
    print(f"trained {args.steps} steps; final fm loss {history[-1][0]:.6f}; "
          f"model at {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def cmd_sample(args) -> int:
    started = time.time()
    try:
        params = mdl.load_params(args.model)
        samples, skel = dt.load_samples(args.data)
    except (OSError, InvalidConfig, SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCHEMA
    if not samples:
        print("error: no samples to drive sampling", file=sys.stderr)
        return EXIT_SCHEMA
    if skel.motion_dim != params.config.frame_dim:
        print(f"error: data dimension {skel.motion_dim} does not match model "
              f"frame_dim {params.config.frame_dim}", file=sys.stderr)
        return EXIT_SCHEMA

    if args.split == "test":
        _, subset = dt.train_test_split(samples)
    elif args.split == "train":
        subset, _ = dt.train_test_split(samples)
    else:
        subset = samples
    if args.limit:
        subset = subset[: args.limit]

    if args.sigma_min is not None:
        sigma_min = args.sigma_min
    else:
        sigma_min = params.meta.get("sigma_min", fp.SIGMA_MIN_DEFAULT)
    cfg = smp.SamplerConfig(steps=args.steps, sigma_min=float(sigma_min),
                            mode=args.mode, guidance=args.guidance,
                            lambda_pene=args.lambda_pene, zeta=args.zeta,
                            w=args.w, beta=args.beta, seed=args.seed)
    predictor = mdl.as_x1_predictor(params, cfg.sigma_min)

    out_samples = []
    for index, s in enumerate(subset):
        ctx = None
        if cfg.guidance != "none" and cfg.lambda_pene > 0.0:
            ctx = smp.GuidanceContext.from_actor(skel, s.actor)
        c = s.label if args.cond == "label" else None
        reaction = smp.sample(predictor, s.actor, cfg, c, ctx, sample_index=index)
        out_samples.append(dt.InteractionSample(s.actor, reaction, s.label,
                                                s.seed_used))
    dt.save_samples(args.out, out_samples, skel)
    _write_manifest(args.out, "sample", vars(args), [args.model, args.data],
                    [args.out], started)
    print(f"sampled {len(out_samples)} reactions ({args.guidance} guidance) "
          f"to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _extractor_from_args(args) -> mx.FeatureExtractor:
    if args.features == "flatten":
        return mx.FeatureExtractor("flatten")
    if args.features == "proj":
        return mx.FeatureExtractor("random_projection", seed=args.feature_seed,
                                   out_dim=args.proj_dim)
    return mx.FeatureExtractor("predictor_latent",
                               params=mdl.load_params(args.feature_model))


def cmd_eval(args) -> int:
    started = time.time()
    samples, skel = dt.load_samples(args.inputs)
    if not samples:
        print("error: empty evaluation input", file=sys.stderr)
        return EXIT_EMPTY
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"iv", "if", "fid", "div", "multimod"}
    if unknown:
        raise InvalidConfig(f"unknown metrics: {sorted(unknown)}")

    report = mx.MetricReport(n_total=len(samples))
    pairs = [(s.actor, s.reactor) for s in samples]
    if "iv" in wanted or "if" in wanted:
        vol, f_pene, f_total, _ = mx.penetration_stats(pairs, skel, args.voxel)
        report.f_total, report.f_pene = f_total, f_pene
        if "iv" in wanted:
            report.iv_cm3 = vol / f_total * mx.M3_TO_CM3
        if "if" in wanted:
            report.if_frac = f_pene / f_total
    else:
        report.f_total = sum(s.reactor.shape[0] for s in samples)

    needs_features = {"fid", "div", "multimod"} & set(wanted)
    if needs_features:
        extractor = _extractor_from_args(args)
        feats = mx.extract_features([s.reactor for s in samples], extractor, skel)
        if "fid" in wanted:
            if not args.ref:
                raise InvalidConfig("fid needs --ref")
            ref_samples, ref_skel = dt.load_samples(args.ref)
            if not ref_samples:
                print("error: empty reference input", file=sys.stderr)
                return EXIT_EMPTY
            ref_feats = mx.extract_features([s.reactor for s in ref_samples],
                                            extractor, ref_skel)
            report.fid = mx.fid(feats, ref_feats)
        if "div" in wanted:
            report.diversity = mx.diversity(feats, args.sd, seed=args.metric_seed,
                                            with_replacement=args.allow_replacement)
        if "multimod" in wanted:
            by_class = {}
            for s, f in zip(samples, feats):
                by_class.setdefault(s.label, []).append(f)
            report.multimodality = mx.multimodality(
                {k: np.stack(v) for k, v in by_class.items()}, args.sl,
                seed=args.metric_seed, with_replacement=args.allow_replacement)

    lines = ["report_version: 1", f"voxel_size_m: {args.voxel!r}"]
    lines += [f"{key}: {value!r}" for key, value in report.items()]
    text = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write(args.out, text)
        _write_manifest(args.out, "eval", vars(args),
                        [args.inputs] + ([args.ref] if args.ref else []),
                        [args.out], started)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    results = selfcheck.run_all(seed=args.seed)
    width = max(len(r.name) for r in results)
    failed = []
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{r.name:<{width}}  {status}  {r.detail}")
        if not r.ok:
            failed.append(r.name)
    if failed:
        print(f"{len(failed)} of {len(results)} properties failed: "
              f"{', '.join(failed)}")
        return EXIT_VERIFY_FAILED
    print(f"all {len(results)} properties passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arflow",
        description="action-reaction flow matching: data, training, guided "
                    "sampling, and penetration metrics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    p.add_argument("--pairs", type=int, default=dt.DEFAULT_PAIRS)
    p.add_argument("--frames", type=int, default=dt.DEFAULT_FRAMES)
    p.add_argument("--joints", type=int, default=dt.DEFAULT_JOINTS)
    p.add_argument("--scenario", default="all",
                   choices=("all",) + dt.SCENARIOS)
    p.add_argument("--contact-fraction", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--fps", type=float, default=dt.DEFAULT_FPS)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the reaction predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-inter", type=float, default=1.0)
    p.add_argument("--sigma-min", type=float, default=1e-4)
    p.add_argument("--t-grid", type=int, default=1000)
    p.add_argument("--cond-dropout", type=float, default=0.1)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--prediction", choices=("x1", "v"), default="x1")
    p.add_argument("--causal", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--unconditioned", action="store_true",
                   help="hide scenario labels from the model")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample reactions for a dataset's actors")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--guidance", choices=smp.GUIDANCE_MODES, default="none")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--lambda-pene", type=float, default=2.0)
    p.add_argument("--zeta", type=float, default=0.5)
    p.add_argument("--w", type=float, default=0.7)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--mode", choices=("x1", "v"), default="x1")
    p.add_argument("--cond", choices=("none", "label"), default="none")
    p.add_argument("--sigma-min", type=float, default=None,
                   help="defaults to the model's training value")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a motion file")
    p.add_argument("--inputs", required=True)
    p.add_argument("--metrics", default="iv,if")
    p.add_argument("--voxel", type=float, default=0.02)
    p.add_argument("--ref", default=None, help="reference motions for fid")
    p.add_argument("--features", choices=("flatten", "proj", "latent"),
                   default="flatten")
    p.add_argument("--proj-dim", type=int, default=32)
    p.add_argument("--feature-seed", type=int, default=0)
    p.add_argument("--feature-model", default=None)
    p.add_argument("--sd", type=int, default=mx.DIVERSITY_SUBSET)
    p.add_argument("--sl", type=int, default=mx.MULTIMODALITY_SUBSET)
    p.add_argument("--metric-seed", type=int, default=0)
    p.add_argument("--allow-replacement", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the algebraic/gradient oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NonFiniteLoss as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NONFINITE
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SCHEMA if args.command == "sample" else EXIT_CONFIG
    except EmptyInput as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_EMPTY
    except (InvalidConfig, OSError, ArflowError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
