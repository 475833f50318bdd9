"""Batch front end: generate / decompose / evaluate, plus config-file runs.

Artifacts land in the --out directory (the RAGGEDCP_OUT environment
variable overrides it). All randomness flows from the single --seed.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .als import AlsConfig, rkhs_td
from .gradient import GdConfig, generalized_loss, grkhs_td
from .io import (
    CsvFormatError,
    artifact_dir,
    load_model,
    load_tensor,
    write_model,
    write_summary,
    write_tensor,
    write_trajectory,
)
from .kernels import KERNEL_NAMES, KernelSpec
from .losses import LOSS_NAMES, loss_from_name
from .sgd import s_grkhs_td
from .sketch import s_rkhs_td
from .solve import SolveError
from .synth import SynthConfig, gen_gaussian, gen_poisson
from .tensor import TensorError, relative_loss, vectorize
from .gradient import loss_values_mean, predictions_at

ALGOS = ("rkhs", "s-rkhs", "grkhs", "s-grkhs")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SOLVER = 3


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CsvFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TensorError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolveError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raggedcp",
        description="Low-rank decomposition of ragged longitudinal tensors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a simulated dataset")
    gen.add_argument("--family", choices=("gaussian", "poisson"), required=True)
    gen.add_argument("--out", default="out", help="artifact directory")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n", type=int, default=60)
    gen.add_argument("--p", type=int, default=51)
    gen.add_argument("--grid-size", type=int, default=251)
    gen.add_argument("--obs-min", type=int, default=8)
    gen.add_argument("--obs-max", type=int, default=20)
    gen.add_argument("--rank-true", type=int, default=5)
    gen.add_argument("--noise-var", type=float, default=1.0)
    gen.add_argument("--delta", type=float, default=1e-10)
    gen.add_argument("--dump-xi", action="store_true",
                     help="also write the true functional factors on the grid")
    gen.set_defaults(func=cmd_generate)

    dec = sub.add_parser("decompose", help="fit a decomposition to a data CSV")
    dec.add_argument("--data", required=True, help="long-format CSV input")
    dec.add_argument("--out", default="out", help="artifact directory")
    dec.add_argument("--algo", choices=ALGOS, default="rkhs")
    dec.add_argument("--kernel", choices=KERNEL_NAMES, default=None,
                     help="default: bernoulli for rkhs/s-rkhs, radial otherwise")
    dec.add_argument("--rank", type=int, default=5)
    dec.add_argument("--penalty", type=float, default=1e-4,
                     help="RKHS ridge coefficient (rkhs/s-rkhs)")
    dec.add_argument("--iters", type=int, default=10, help="iterations (rkhs/s-rkhs)")
    dec.add_argument("--seed", type=int, default=0)
    dec.add_argument("--s1", type=int, default=10)
    dec.add_argument("--s2", type=int, default=40)
    dec.add_argument("--s3", type=int, default=10)
    dec.add_argument("--sketch-ab", type=_bool_flag, default=True,
                     help="sketch the A/B updates too (s-rkhs)")
    dec.add_argument("--loss", choices=LOSS_NAMES, default="poisson",
                     help="pairwise loss (grkhs/s-grkhs)")
    dec.add_argument("--delta", type=float, default=None,
                     help="loss shift; family default when omitted")
    dec.add_argument("--beta-exponent", type=float, default=0.5)
    dec.add_argument("--norm-bound", type=float, default=1e4)
    dec.add_argument("--clip", type=float, default=None)
    dec.add_argument("--alpha", type=float, default=0.4, help="learning rate")
    dec.add_argument("--epochs", type=int, default=15)
    dec.add_argument("--iters-per-epoch", type=int, default=10)
    dec.add_argument("--importance-weighting", type=_bool_flag, default=False)
    dec.add_argument("--paper-step-factor", type=_bool_flag, default=False)
    dec.add_argument("--stop-eps", type=float, default=None,
                     help="improvement stop threshold; negative disables "
                          "(default: 1e-6 for rkhs/s-rkhs, disabled otherwise)")
    dec.add_argument("--stop-window", type=int, default=3)
    dec.add_argument("--rescale-time", type=_bool_flag, default=False,
                     help="min-max rescale timestamps to [0, 1]")
    dec.set_defaults(func=cmd_decompose)

    ev = sub.add_parser("evaluate", help="score saved factors against a data CSV")
    ev.add_argument("--model", required=True, help="artifact directory")
    ev.add_argument("--data", required=True)
    ev.add_argument("--loss", choices=LOSS_NAMES, default=None)
    ev.add_argument("--delta", type=float, default=None)
    ev.add_argument("--beta-exponent", type=float, default=0.5)
    ev.add_argument("--rescale-time", type=_bool_flag, default=False)
    ev.set_defaults(func=cmd_evaluate)

    run = sub.add_parser("run", help="dispatch a flat key-value config file")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)
    return parser


def _bool_flag(text) -> bool:
    if isinstance(text, bool):
        return text
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def cmd_generate(args) -> int:
    out = artifact_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(
        n=args.n,
        p=args.p,
        grid_size=args.grid_size,
        obs_min=args.obs_min,
        obs_max=args.obs_max,
        rank_true=args.rank_true,
        noise_var=args.noise_var,
        delta=args.delta,
        seed=args.seed,
    )
    if args.family == "gaussian":
        tensor, truth = gen_gaussian(cfg)
    else:
        tensor, truth = gen_poisson(cfg)
    write_tensor(out / "data.csv", tensor)
    write_tensor(out / "truth.csv", truth.signal)
    if args.dump_xi:
        _dump_xi(out / "xi.csv", truth)
    x_vec, vmap = vectorize(tensor)
    sig_vec, _ = vectorize(truth.signal)
    fields = {
        "task": "generate",
        "family": args.family,
        "seed": args.seed,
        "n": cfg.n,
        "p": cfg.p,
        "grid_size": cfg.grid_size,
        "omega": tensor.omega,
    }
    if args.family == "gaussian":
        num = float(np.sum((x_vec - sig_vec) ** 2))
        fields["nominal_relative_loss"] = num / float(x_vec @ x_vec)
    else:
        fields["nominal_loss"] = loss_values_mean(
            loss_from_name("poisson", delta=cfg.delta), sig_vec, x_vec
        )
    write_summary(out / "summary", fields)
    print(f"wrote {out / 'data.csv'} ({tensor.omega} observations)")
    return EXIT_OK


def _dump_xi(path, truth):
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["t"] + [f"xi_{r + 1}" for r in range(truth.rank)])
        for t in truth.grid:
            writer.writerow(
                ["%.17g" % t] + ["%.17g" % truth.xi(r, t) for r in range(truth.rank)]
            )


def _resolve_kernel(args) -> KernelSpec:
    if args.kernel is not None:
        return KernelSpec(args.kernel)
    return KernelSpec("bernoulli" if args.algo in ("rkhs", "s-rkhs") else "radial")


def cmd_decompose(args) -> int:
    out = artifact_dir(args.out)
    tensor, subj_labels, feat_labels = load_tensor(args.data, rescale=args.rescale_time)
    kern = _resolve_kernel(args)
    t_start = time.perf_counter()

    if args.algo in ("rkhs", "s-rkhs"):
        stop_eps = 1e-6 if args.stop_eps is None else args.stop_eps
        config = AlsConfig(
            rank=args.rank,
            penalty=args.penalty,
            max_iters=args.iters,
            stop_eps=stop_eps,
            stop_window=args.stop_window,
            seed=args.seed,
        )
        if args.algo == "rkhs":
            result = rkhs_td(tensor, config, kern=kern)
        else:
            result = s_rkhs_td(
                tensor, config, args.s1, args.s2, args.s3,
                kern=kern, sketch_ab=args.sketch_ab,
            )
        loss_label = "relative_loss"
    else:
        spec = loss_from_name(
            args.loss, delta=args.delta, beta=args.beta_exponent,
            norm_bound=args.norm_bound, clip=args.clip,
        )
        stop_eps = -1.0 if args.stop_eps is None else args.stop_eps
        config = GdConfig(
            rank=args.rank,
            alpha=args.alpha,
            norm_bound=args.norm_bound,
            max_iters=args.epochs * args.iters_per_epoch,
            epoch_len=args.iters_per_epoch,
            clip=args.clip,
            stop_eps=stop_eps,
            stop_window=args.stop_window,
            seed=args.seed,
        )
        if args.algo == "grkhs":
            result = grkhs_td(tensor, spec, config, kern=kern)
        else:
            result = s_grkhs_td(
                tensor, spec, config, args.s1, args.s2, args.s3, kern=kern,
                importance_weighting=args.importance_weighting,
                paper_step_factor=args.paper_step_factor,
            )
        loss_label = "loss"

    wall = time.perf_counter() - t_start
    write_model(out, result.model, subj_labels, feat_labels)
    write_trajectory(
        out / "trajectory.csv",
        result.losses,
        result.wall_times,
        plan_seeds=result.plan_seeds if result.plan_seeds else None,
        row_label="iteration" if args.algo in ("rkhs", "s-rkhs") else "epoch",
        loss_label=loss_label,
    )
    fields = {
        "task": "decompose",
        "algorithm": args.algo,
        "kernel": kern.kind,
        "seed": args.seed,
        "n": tensor.n,
        "p": tensor.p,
        "omega": tensor.omega,
        "rank": args.rank,
        "iterations": result.iterations,
        "stopped_early": result.stopped_early,
        "final_loss": result.final_loss,
        "final_relative_loss": relative_loss(tensor, result.model),
        "wall_time_sec": wall,
    }
    if args.algo in ("grkhs", "s-grkhs"):
        fields["loss_kind"] = args.loss
        fields["alpha"] = args.alpha
        fields["norm_bound"] = args.norm_bound
    if args.algo in ("s-rkhs", "s-grkhs"):
        fields["s1"], fields["s2"], fields["s3"] = args.s1, args.s2, args.s3
    write_summary(out / "summary", fields)
    print(f"{args.algo}: final {loss_label} {result.final_loss:.6g} "
          f"after {result.iterations} iterations ({wall:.2f}s)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tensor, _, _ = load_tensor(args.data, rescale=args.rescale_time)
    model = load_model(args.model)
    rel = relative_loss(tensor, model)
    print(f"relative_loss = {rel:.17g}")
    if args.loss is not None:
        spec = loss_from_name(args.loss, delta=args.delta, beta=args.beta_exponent)
        gl = generalized_loss(tensor, model, spec)
        print(f"{args.loss}_loss = {gl:.17g}")
    return EXIT_OK


# Flat key-value config schema for `run`, per task.
_COMMON_KEYS = {"task": str, "out": str, "seed": int}
_SCHEMAS = {
    "generate": {
        **_COMMON_KEYS,
        "family": str,
        "n": int,
        "p": int,
        "grid_size": int,
        "obs_min": int,
        "obs_max": int,
        "rank_true": int,
        "noise_var": float,
        "delta": float,
        "dump_xi": bool,
    },
    "decompose": {
        **_COMMON_KEYS,
        "data": str,
        "algo": str,
        "kernel": str,
        "rank": int,
        "penalty": float,
        "iters": int,
        "s1": int,
        "s2": int,
        "s3": int,
        "sketch_ab": bool,
        "loss": str,
        "delta": float,
        "beta_exponent": float,
        "norm_bound": float,
        "clip": float,
        "alpha": float,
        "epochs": int,
        "iters_per_epoch": int,
        "importance_weighting": bool,
        "paper_step_factor": bool,
        "stop_eps": float,
        "stop_window": int,
        "rescale_time": bool,
    },
    "evaluate": {
        **_COMMON_KEYS,
        "model": str,
        "data": str,
        "loss": str,
        "delta": float,
        "beta_exponent": float,
        "rescale_time": bool,
    },
}


def parse_config(path) -> dict:
    """Strict flat key-value config: unknown keys are rejected."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            raw[key.strip()] = val.strip()
    task = raw.get("task")
    if task not in _SCHEMAS:
        raise ValueError(f"{path}: config needs task = generate|decompose|evaluate")
    schema = _SCHEMAS[task]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    parsed = {}
    for key, val in raw.items():
        typ = schema[key]
        if typ is bool:
            parsed[key] = _bool_flag(val)
        else:
            parsed[key] = typ(val)
    return parsed


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    task = cfg.pop("task")
    argv = [task]
    for key, val in cfg.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(val, bool):
            if key == "dump_xi":
                if val:
                    argv.append(flag)
                continue
            argv.extend([flag, "true" if val else "false"])
        else:
            argv.extend([flag, str(val)])
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
