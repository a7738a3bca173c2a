"""Command-line entry point.

Subcommands: train, eval, grid, saliency, params, gradcheck, baseline.
Every run writes a JSON manifest (resolved config, seed, version, timestamps,
output files). All randomness flows from --seed; commands that consume
randomness refuse to run without it, so published numbers stay reproducible.
Errors exit nonzero with one machine-parseable line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__, net, saliency
from . import evaluate as ev
from .checkpoint import load_checkpoint
from .env import MicroEnv, Scenario, config_for
from .net import LstmState, NetworkSpec, Variant
from .preprocess import DropConfig, make_observation
from .trainer import TrainConfig, train

VARIANT_FLAG = {"single": Variant.SINGLE, "dual": Variant.DUAL,
                "generic": Variant.GENERIC_ONLY}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one machine-parseable line instead of usage + error
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def _manifest(args, command, config, outputs, started):
    path = getattr(args, "manifest", None)
    if path is None:
        base = getattr(args, "out", None) or getattr(args, "ckpt_out", None)
        path = (os.path.splitext(base)[0] + ".manifest.json") if base \
            else f"{command}.manifest.json"
    doc = {
        "command": command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "started_utc": started,
        "ended_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "outputs": [str(o) for o in outputs],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return path


def _load_ckpt(path, want_variant=None, want_scenario=None):
    if not os.path.exists(path):
        raise CliError("missing-file", f"checkpoint not found: {path}")
    params, adam, meta = load_checkpoint(path)
    variant = Variant(meta["variant"])
    if want_variant is not None and variant != want_variant:
        raise CliError("variant-mismatch",
                       f"checkpoint is {variant.value}, requested {want_variant.value}")
    if want_scenario is not None and meta.get("scenario") != Scenario(want_scenario).value:
        raise CliError("scenario-mismatch",
                       f"checkpoint is {meta.get('scenario')}, requested {want_scenario}")
    spec = NetworkSpec(variant, n_actions=int(meta.get("n_actions", 3)))
    return params, spec, meta


def _drop_from(args):
    return DropConfig(p_generic=getattr(args, "p_generic", 0.0) or 0.0,
                      p_center=getattr(args, "p_center", 0.0) or 0.0)


def cmd_train(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    train_drop = None
    if args.train_drop_generic or args.train_drop_center:
        train_drop = DropConfig(p_generic=args.train_drop_generic,
                                p_center=args.train_drop_center)
    cfg = TrainConfig(
        scenario=args.scenario, variant=VARIANT_FLAG[args.view],
        workers=args.workers, total_frames=args.frames, t_max=args.t_max,
        gamma=args.gamma, entropy_weight=args.entropy_weight,
        value_coeff=args.value_coeff, lr=args.lr, grad_clip=args.grad_clip,
        seed=args.seed, checkpoint_path=args.out, log_path=args.log,
        checkpoint_interval=args.checkpoint_interval, train_drop=train_drop)
    result = train(cfg)
    print(f"trained {result.env_frames} frames, {result.updates} updates, "
          f"{result.episodes} episodes, {result.wall_s:.0f}s")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"log: {result.log_path}")
    _manifest(args, "train", cfg.echo(), [cfg.checkpoint_path, cfg.log_path], started)
    return 0


def cmd_eval(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    want = VARIANT_FLAG[args.view] if args.view else None
    params, spec, meta = _load_ckpt(args.ckpt, want, args.scenario)
    scenario = args.scenario or meta["scenario"]
    stats = ev.evaluate(params, spec, scenario, drop=_drop_from(args),
                        episodes=args.episodes, seed=args.seed, greedy=args.greedy)
    print(f"mean {stats.mean:.3f} std {stats.std:.3f} n {stats.n} "
          f"min {stats.min:.1f} max {stats.max:.1f}")
    outputs = []
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("mean,std,n,min,max\n")
            fh.write(f"{stats.mean!r},{stats.std!r},{stats.n},"
                     f"{stats.min!r},{stats.max!r}\n")
        outputs.append(args.out)
    config = {"ckpt": args.ckpt, "scenario": str(scenario), "episodes": args.episodes,
              "greedy": args.greedy, "drop": asdict(_drop_from(args))}
    _manifest(args, "eval", config, outputs, started)
    return 0


def cmd_grid(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    want = VARIANT_FLAG[args.view] if args.view else None
    params, spec, meta = _load_ckpt(args.ckpt, want, args.scenario)
    scenario = args.scenario or meta["scenario"]
    p_values = [float(p) for p in args.p_values.split(",")]
    grid = ev.robustness_grid(params, spec, scenario, p_values=p_values,
                              episodes=args.episodes, seed=args.seed,
                              greedy=args.greedy)
    grid.write_csv(args.out)
    print(f"s_min {grid.s_min:.3f} s_max {grid.s_max:.3f}")
    for cell in grid.cells:
        pc = "-" if cell.p_center is None else f"{cell.p_center:.1f}"
        print(f"p_generic {cell.p_generic:.1f} p_center {pc}: "
              f"mean {cell.stats.mean:.2f} s_p {cell.s_p:.3f}")
    config = {"ckpt": args.ckpt, "scenario": str(scenario), "p_values": p_values,
              "episodes": args.episodes, "greedy": args.greedy}
    _manifest(args, "grid", config, [args.out], started)
    return 0


def cmd_baseline(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    s_min = ev.estimate_baselines(args.scenario, episodes=args.episodes, seed=args.seed)
    print(f"s_min mean {s_min.mean:.3f} std {s_min.std:.3f} n {s_min.n}")
    s_max = None
    if args.ckpt:
        params, spec, meta = _load_ckpt(args.ckpt, want_scenario=args.scenario)
        s_max = ev.evaluate(params, spec, args.scenario, drop=DropConfig(),
                            episodes=args.episodes, seed=args.seed)
        print(f"s_max mean {s_max.mean:.3f} std {s_max.std:.3f} n {s_max.n}")
    outputs = []
    if args.out:
        ev.write_baselines_csv(args.out, s_min, s_max)
        outputs.append(args.out)
    config = {"scenario": args.scenario, "episodes": args.episodes, "ckpt": args.ckpt}
    _manifest(args, "baseline", config, outputs, started)
    return 0


def cmd_saliency(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    params, spec, meta = _load_ckpt(args.ckpt, want_scenario=args.scenario)
    scenario = args.scenario or meta["scenario"]
    env = MicroEnv(config_for(scenario),
                   seed=np.random.SeedSequence(entropy=args.seed, spawn_key=(0,)))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed,
                                                       spawn_key=(1,)))
    obs = make_observation(env.reset(), spec.variant)
    state = LstmState.zeros(spec.lstm_units)
    rows = []
    written = []
    for idx in range(args.frames):
        maps = saliency.compute_saliency(params, spec, obs, state,
                                         policy_scalar=args.policy_scalar)
        written += saliency.export_maps(maps, args.out, frame_idx=idx, index_rows=rows)
        pv, state = net.forward(params, spec, obs, state)
        action = int(np.argmax(pv.policy)) if args.greedy \
            else net.sample_action(rng, pv.policy)
        result = env.step(action)
        if result.done:
            obs = make_observation(env.reset(), spec.variant)
            state = LstmState.zeros(spec.lstm_units)
        else:
            obs = make_observation(result.frame, spec.variant)
    index = saliency.write_index(args.out, rows)
    print(f"wrote {len(written)} maps + {index}")
    config = {"ckpt": args.ckpt, "scenario": str(scenario), "frames": args.frames,
              "policy_scalar": args.policy_scalar}
    _manifest(args, "saliency", config, written + [index], started)
    return 0


def cmd_params(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    spec = NetworkSpec(VARIANT_FLAG[args.view], n_actions=args.actions)
    params = net.build_network(spec, seed=0)
    print(f"{'tensor':24s} {'shape':>18s} {'count':>10s}")
    for name, tensor in params.items():
        print(f"{name:24s} {str(tuple(tensor.shape)):>18s} {tensor.size:>10d}")
    total = net.param_count(params)
    print(f"{'total':24s} {'':>18s} {total:>10d}")
    single = net.build_network(NetworkSpec(Variant.SINGLE, n_actions=args.actions),
                               seed=0)
    reduction = net.reduction_ratio(single, params)
    print(f"reduction vs single: {100 * reduction:.2f}%")
    _manifest(args, "params", {"view": args.view, "actions": args.actions,
                               "total": total}, [], started)
    return 0


def _gradcheck_small_spec(variant):
    return NetworkSpec(variant, n_actions=3, frame_size=16, conv_channels=(2, 3),
                       conv_kernels=(4, 2), conv_strides=(2, 1), fc_units=8,
                       lstm_units=8)


def run_gradcheck(seed, tolerance=1e-5, layer_trials=100, loss_trials=2,
                  lengths=(1, 2, 3, 4, 5), report=print):
    """Full FD suite: every layer type plus the rollout loss for all variants
    and lengths. Returns the worst relative error seen."""
    from .gradcheck_suite import layer_trial, loss_trial
    rng = np.random.default_rng(seed)
    worst = 0.0
    for kind in ("conv", "fc", "elu", "softmax", "lstm"):
        kind_worst = 0.0
        for _ in range(layer_trials):
            rep = layer_trial(kind, rng, tolerance)
            kind_worst = max(kind_worst, rep.max_rel_error)
        report(f"layer {kind}: {layer_trials} trials, max rel err {kind_worst:.3e}")
        worst = max(worst, kind_worst)
    for variant in (Variant.SINGLE, Variant.DUAL, Variant.GENERIC_ONLY):
        spec = _gradcheck_small_spec(variant)
        var_worst = 0.0
        for length in lengths:
            for _ in range(loss_trials):
                rep = loss_trial(spec, rng, length, tolerance)
                var_worst = max(var_worst, rep.max_rel_error)
        report(f"loss {variant.value}: lengths {list(lengths)} x {loss_trials}, "
               f"max rel err {var_worst:.3e}")
        worst = max(worst, var_worst)
    return worst


def build_parser():
    parser = _Parser(prog="dualview", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def add_seed(p):
        p.add_argument("--seed", type=int, required=True,
                       help="master seed; required, no wall-clock seeding")

    p = sub.add_parser("train", help="run asynchronous actor-critic training")
    p.add_argument("--scenario", choices=["basic", "health"], default="basic")
    p.add_argument("--view", choices=["single", "dual", "generic"], default="dual")
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--frames", type=int, default=5_000_000)
    p.add_argument("--t-max", type=int, default=20)
    p.add_argument("--gamma", type=float, default=0.99)
    p.add_argument("--entropy-weight", type=float, default=0.01)
    p.add_argument("--value-coeff", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--grad-clip", type=float, default=40.0)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--train-drop-generic", type=float, default=0.0,
                   help="per-view drop rate applied during training")
    p.add_argument("--train-drop-center", type=float, default=0.0)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", required=True, help="episode log CSV path")
    p.add_argument("--manifest")
    add_seed(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a trained checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenario", choices=["basic", "health"])
    p.add_argument("--view", choices=["single", "dual", "generic"])
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--p-generic", "--p-main", dest="p_generic", type=float, default=0.0)
    p.add_argument("--p-center", type=float, default=0.0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out")
    p.add_argument("--manifest")
    add_seed(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("grid", help="robustness grid over drop probabilities")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenario", choices=["basic", "health"])
    p.add_argument("--view", choices=["single", "dual", "generic"])
    p.add_argument("--p-values", default="0,0.2,0.5,0.8,1.0")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    add_seed(p)
    p.set_defaults(fn=cmd_grid)

    p = sub.add_parser("baseline", help="estimate the random-policy floor")
    p.add_argument("--scenario", choices=["basic", "health"], required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--ckpt", help="also measure the trained zero-drop ceiling")
    p.add_argument("--out")
    p.add_argument("--manifest")
    add_seed(p)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("saliency", help="export input-gradient saliency maps")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenario", choices=["basic", "health"])
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--policy-scalar", choices=["prob", "logit"], default="prob")
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--manifest")
    add_seed(p)
    p.set_defaults(fn=cmd_saliency)

    p = sub.add_parser("params", help="per-tensor parameter table")
    p.add_argument("--view", choices=["single", "dual", "generic"], required=True)
    p.add_argument("--actions", type=int, default=3)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--layer-trials", type=int, default=100)
    p.add_argument("--loss-trials", type=int, default=2)
    add_seed(p)
    p.set_defaults(fn=cmd_gradcheck_real)

    return parser


def cmd_gradcheck_real(args):
    started = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    worst = run_gradcheck(args.seed, tolerance=args.tolerance,
                          layer_trials=args.layer_trials,
                          loss_trials=args.loss_trials)
    ok = worst <= args.tolerance
    print(f"overall max rel err {worst:.3e} tolerance {args.tolerance:g}: "
          f"{'PASS' if ok else 'FAIL'}")
    _manifest(args, "gradcheck",
              {"tolerance": args.tolerance, "layer_trials": args.layer_trials,
               "loss_trials": args.loss_trials}, [], started)
    return 0 if ok else 1


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: invalid-input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
