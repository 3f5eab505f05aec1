"""Command-line interface: gen-data, train-cpvqvae, train-lfmm, sample, eval, ablate."""

import argparse
import os
import sys

from .autoencoder import VARIANTS
from .config import RunConfig, load_config
from . import pipeline


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed for this stage")
    p.add_argument("--config", type=str, default=None, help="flat key = value config file")
    p.add_argument("--out", type=str, required=True, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scenevq",
        description="Point-cloud scene generation: partitioned VQ autoencoder + latent flow matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic labeled scene dataset")
    _add_common(p)
    p.add_argument("--scenes", type=int, default=500, help="number of scenes before the split")

    p = sub.add_parser("train-cpvqvae", help="train the point-cloud autoencoder")
    _add_common(p)
    p.add_argument("--data", type=str, required=True, help="dataset directory (gen-data output)")
    p.add_argument("--variant", choices=VARIANTS, default=None, help="ablation variant (default from config)")
    p.add_argument("--steps", type=int, default=None, help="override training steps")

    p = sub.add_parser("train-lfmm", help="train the latent flow model on autoencoder latents")
    _add_common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--vae", type=str, required=True, help="trained autoencoder bundle")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("sample", help="generate scenes, decode objects, write JSON + PLY")
    _add_common(p)
    p.add_argument("--vae", type=str, required=True)
    p.add_argument("--lfmm", type=str, required=True)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--steps", type=int, default=None, help="Euler steps (default from config)")

    p = sub.add_parser("eval", help="score generated scenes against the held-out set")
    _add_common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--vae", type=str, required=True)
    p.add_argument("--generated", type=str, required=True, help="sample output directory")

    p = sub.add_parser("ablate", help="run the variant grid or the sampling-steps sweep")
    _add_common(p)
    p.add_argument("--data", type=str, required=True)
    p.add_argument("--study", choices=("variants", "steps"), default="variants")
    p.add_argument("--vae", type=str, default=None, help="(steps study) trained autoencoder bundle")
    p.add_argument("--lfmm", type=str, default=None, help="(steps study) trained flow bundle")
    p.add_argument("--steps", type=int, default=None, help="(variants study) training steps override")
    p.add_argument("--scenes", type=int, default=200, help="(steps study) scenes per setting")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config) if args.config else RunConfig()
    os.makedirs(args.out, exist_ok=True)

    if args.command == "gen-data":
        train, test = pipeline.run_gen_data(args.out, args.scenes, args.seed, cfg)
        print(f"wrote {len(train)} train / {len(test)} test scenes to {args.out}")

    elif args.command == "train-cpvqvae":
        model, path = pipeline.run_train_cpvqvae(
            args.data, args.out, cfg, variant=args.variant, seed=args.seed, steps=args.steps
        )
        util = model.codebook_.active_fraction() if model.codebook_ is not None else float("nan")
        print(f"trained {model.variant}: final loss {model.history_['loss'][-1]:.4f}, "
              f"utilization {util:.3f} -> {path}")

    elif args.command == "train-lfmm":
        model, path = pipeline.run_train_lfmm(
            args.data, args.vae, args.out, cfg, seed=args.seed, steps=args.steps
        )
        print(f"trained flow model: final loss {model.history_[-1]:.4f} -> {path}")

    elif args.command == "sample":
        records, decoded = pipeline.run_sample(
            args.vae, args.lfmm, args.out, args.scenes, cfg, n_steps=args.steps, seed=args.seed
        )
        print(f"wrote {len(records)} scenes ({len(decoded)} objects) to {args.out}/scenes")

    elif args.command == "eval":
        report = pipeline.run_eval(args.generated, args.data, args.vae, args.out, cfg)
        for key in sorted(report):
            print(f"{key}: {report[key]}")

    elif args.command == "ablate":
        if args.study == "variants":
            _, rows = pipeline.run_ablate_variants(
                args.data, args.out, cfg, seed=args.seed, steps=args.steps
            )
            for row in rows:
                print("variant {}: loss {:.4f} util {:.3f} cd {:.3f} p2m {:.3f}".format(*row))
        else:
            if not args.vae or not args.lfmm:
                print("ablate --study steps requires --vae and --lfmm", file=sys.stderr)
                return 2
            rows = pipeline.run_ablate_steps(
                args.vae, args.lfmm, args.data, args.out, cfg,
                seed=args.seed, n_scenes=args.scenes,
            )
            for n_steps, runtime, ckl, cons in rows:
                print(f"steps {n_steps}: {runtime:.3f}s ckl {ckl:.3f} consistency {cons:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
