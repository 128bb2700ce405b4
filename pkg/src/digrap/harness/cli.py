"""Command line entry point: ``digrap {pretrain,run,sweep,score-shift,grad-check}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..exceptions import DigrapError
from ..models import Batch, ModelSpec, grad_check, input_grad_check
from ..paramspace import init_params
from ..shiftlab import make_suite
from ..training import pretrain
from .config import MU_SWEEP, SUITE_KEYS, help_text, parse_config, parse_lines, parse_value
from .io import write_results
from .runner import _stream, run_experiment

GRAD_TOL = 1e-4


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", help="seed or comma list of seeds (overrides 'seeds')")
    p.add_argument("--out", help="output directory (overrides 'output_dir')")
    p.add_argument("--method", help="comma list of methods (overrides 'methods')")
    p.add_argument("--mu", help="comma list of omega learning rates")
    p.add_argument("--fixed-omega", help="comma list of fixed projection strengths")
    p.add_argument("--epochs", help="fine-tuning epochs")
    p.add_argument("--suite-override", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                   help="override a suite key (" + ", ".join(SUITE_KEYS) + ")")
    p.add_argument("--set", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                   help="override any config key")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="digrap", description="Robust fine-tuning experiments with directional gradient projection.",
        epilog=help_text(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (("pretrain", "pre-train and write checkpoints"),
                       ("run", "run the configured method grid"),
                       ("sweep", "DiGraP mu sweep against vanilla fine-tuning"),
                       ("score-shift", "Mahalanobis shift scores of every suite split")):
        p = sub.add_parser(name, help=desc, epilog=help_text(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
    p = sub.add_parser("grad-check", help="finite-difference check of the model gradients")
    p.add_argument("--layers", default="16,64,64,8", help="input,hidden...,classes")
    p.add_argument("--n", type=int, default=7, help="batch size")
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args):
    ov = {}
    for k, v in args.set:
        ov[k] = parse_value(k, v)
    for k, v in args.suite_override:
        if k not in SUITE_KEYS:
            raise DigrapError(f"{k!r} is not a suite key; expected one of {SUITE_KEYS}")
        ov[k] = parse_value(k, v)
    for flag, key in (("seed", "seeds"), ("out", "output_dir"), ("method", "methods"),
                      ("mu", "mu"), ("fixed_omega", "fixed_omega"), ("epochs", "epochs")):
        val = getattr(args, flag)
        if val is not None:
            ov[key] = parse_value(key, val)
    return ov


def _cmd_pretrain(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.model_spec()
    for seed in cfg.seeds:
        suite = make_suite(replace(cfg.task, seed=seed), cfg.suite)
        pre = suite.datasets["pretrain"]
        space = pretrain(spec, pre.x, pre.y, cfg.pretrain_config(), seed=_stream(seed, 1))
        path = out / f"checkpoint_seed{seed}.json"
        space.save(path)
        print(path)
    return 0


def _cmd_run(cfg):
    res = run_experiment(cfg)
    paths = write_results(res, cfg.output_dir)
    summary = res.summary()
    print(f"run {res.run_id}: {len(res.cells)} cells, {len(res.failed)} failed")
    print(f"{'method':28s} {'ID':>8s} {'OOD avg':>8s} {'ID d%':>8s} {'OOD d%':>8s}")
    for m, s in summary.items():
        if not s.get("n_seeds"):
            print(f"{m:28s} failed")
            continue
        fmt = lambda v: "   n/a" if v is None else f"{v:+8.2f}"  # noqa: E731
        print(f"{m:28s} {100 * s['id']:8.2f} {100 * s['ood_avg']:8.2f} "
              f"{fmt(s['id_delta_pct'])} {fmt(s['ood_delta_pct'])}")
    print(f"wrote {paths['results'].parent}")
    return 0 if not res.failed else 1


def _cmd_grad_check(args):
    sizes = [int(s) for s in args.layers.split(",")]
    spec = ModelSpec("linear" if len(sizes) == 2 else "mlp", sizes)
    space = init_params(sizes, args.seed)
    rng = np.random.default_rng(args.seed)
    for g in space.groups:
        g.values += 0.1 * rng.standard_normal(g.size)
    batch = Batch(rng.standard_normal((args.n, sizes[0])), rng.integers(0, sizes[-1], args.n))
    p = grad_check(space, spec, batch, args.h)
    x = input_grad_check(space, spec, batch, args.h)
    print(json.dumps({"layers": sizes, "h": args.h, "param_max_rel_err": p, "input_max_rel_err": x}))
    return 0 if max(p, x) < GRAD_TOL else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "grad-check":
            return _cmd_grad_check(args)
        ov = _overrides(args)
        from_file = {}
        if args.config and Path(args.config).exists():
            from_file = parse_lines(Path(args.config).read_text(encoding="utf-8"), args.config)
        defaults = {}
        if args.command == "sweep":
            defaults = {"methods": ("vanilla", "digrap"), "mu": MU_SWEEP}
        elif args.command == "score-shift":
            defaults = {"methods": ("vanilla",)}
        for k, v in defaults.items():
            if k not in ov and k not in from_file:
                ov[k] = v
        cfg = parse_config(args.config, ov)
        if args.command == "pretrain":
            return _cmd_pretrain(cfg)
        return _cmd_run(cfg)
    except (DigrapError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
