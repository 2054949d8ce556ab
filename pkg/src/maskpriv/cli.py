"""Command-line experiment harness.

Subcommands: gen, train, table, sweep, simulate, audit.
Exit status: 0 success / compliant, 1 non-compliant capture, 2 input error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .classifier import TrainConfig, load_model, save_model, train
from .errors import AuditError, MaskPrivError
from .pipeline import DeploymentMode
from .protocol import audit, audit_messages, encode_stream

log = logging.getLogger("maskpriv")

EXIT_OK, EXIT_NONCOMPLIANT, EXIT_INPUT = 0, 1, 2


def _write_or_print(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8", newline="")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _data(args) -> ex.DataConfig:
    return ex.DataConfig(args.per_class, args.hard_fraction, dataset_dir=args.dataset)


def _mode(args) -> DeploymentMode:
    return DeploymentMode.parse(args.mode, args.blur_factor)


def cmd_gen(args) -> int:
    if not args.out:
        raise MaskPrivError("gen needs --out DIR")
    path = ex.generate_dataset(args.out, args.per_class, args.seed, args.hard_fraction)
    print(f"wrote {2 * args.per_class} samples to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    samples = _data(args).samples(args.seed)
    blur = args.blur_factor if args.mode == "centralized" else None
    result = train(samples, TrainConfig(epochs=args.epochs, seed=args.seed), blur=blur)
    m = result.metrics
    print(f"held-out accuracy {m.accuracy:.4f}  tp={m.tp} tn={m.tn} fp={m.fp} fn={m.fn}")
    if args.out:
        save_model(result.model, args.out)
        print(f"model saved to {args.out}")
    return EXIT_OK


def cmd_table(args) -> int:
    rows = ex.run_table(_data(args), args.seed, args.blur_factor, args.epochs)
    print(ex.render_table(rows))
    if args.out:
        _write_or_print(ex.table_csv(rows), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ex.SweepConfig(
        f_values=tuple(args.f_values),
        per_class=args.per_class,
        hard_fraction=args.hard_fraction,
        seeds=tuple(args.seed),
        epochs=args.epochs,
        dataset_dir=args.dataset,
    )
    result = ex.run_sweep(cfg, jobs=args.jobs)
    _write_or_print(result.csv(), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    mode = _mode(args)
    model = load_model(args.model) if args.model else None
    res = ex.run_overlap(args.persons, args.masked, args.cameras, args.duplicate,
                         args.dup_cameras, mode, model, args.seed)

    def fmt(r):
        return "undefined" if r is None else f"{r:.4f}"

    print(f"mode            {mode.kind.value}")
    print(f"naive ratio     {fmt(res.naive.ratio_masked)}  ({res.naive.persons_masked}/{res.naive.persons_total})")
    if res.dedup is not None:
        print(f"dedup ratio     {fmt(res.dedup.ratio_masked)}  ({res.dedup.persons_masked}/{res.dedup.persons_total})")
    print(f"true ratio      {fmt(res.true_ratio)}")
    if res.naive.ratio_masked is not None:
        print(f"naive bias      {res.naive.ratio_masked - res.true_ratio:+.4f}")
    verdict = audit_messages(res.messages, mode)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(encode_stream(res.messages))
        print(f"capture         {args.out}")
    print(f"audit           {'compliant' if verdict.compliant else 'NON-COMPLIANT'}")
    for idx, reason in verdict.violations:
        print(f"  [{idx}] {reason}")
    return EXIT_OK


def cmd_audit(args) -> int:
    data = Path(args.capture).read_bytes()
    try:
        verdict = audit(data, _mode(args))
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{verdict.messages} messages: {'compliant' if verdict.compliant else 'NON-COMPLIANT'}")
    for idx, reason in verdict.violations:
        print(f"  [{idx}] {reason}")
    return EXIT_OK if verdict.compliant else EXIT_NONCOMPLIANT


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--dataset", help="dataset directory written by 'gen' (default: generate in memory)")
    common.add_argument("--epochs", type=int, default=15)
    common.add_argument("--blur-factor", type=float, default=ex.TABLE_BLUR)
    common.add_argument("--mode", choices=["baseline", "centralized", "decentralized"], default="centralized")
    common.add_argument("--per-class", type=int, default=ex.DEFAULT_PER_CLASS)
    common.add_argument("--hard-fraction", type=float, default=ex.DEFAULT_HARD_FRACTION)
    common.add_argument("-v", "--verbose", action="store_true")

    single_seed = argparse.ArgumentParser(add_help=False)
    single_seed.add_argument("--seed", type=int, default=1)
    multi_seed = argparse.ArgumentParser(add_help=False)
    multi_seed.add_argument("--seed", type=int, nargs="+", default=list(ex.DEFAULT_SEEDS))

    p = argparse.ArgumentParser(prog="maskpriv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common, single_seed], help="write a synthetic dataset")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common, single_seed], help="train one model and save it")
    t.set_defaults(func=cmd_train)

    tb = sub.add_parser("table", parents=[common, multi_seed], help="baseline / centralized / decentralized comparison")
    tb.set_defaults(func=cmd_table)

    sw = sub.add_parser("sweep", parents=[common, multi_seed], help="accuracy versus blur factor")
    sw.add_argument("--f-values", type=float, nargs="+", default=list(ex.DEFAULT_F_VALUES))
    sw.add_argument("--jobs", type=int, default=1)
    sw.set_defaults(func=cmd_sweep)

    sm = sub.add_parser("simulate", parents=[common, single_seed], help="multi-camera overlap-bias simulation")
    sm.add_argument("--persons", type=int, default=10)
    sm.add_argument("--masked", type=int, default=6)
    sm.add_argument("--cameras", type=int, default=3)
    sm.add_argument("--duplicate", choices=ex.SCENARIOS, default="masked")
    sm.add_argument("--dup-cameras", type=int, default=3)
    sm.add_argument("--model", help="model file from 'train' (default: perfect ground-truth classifier)")
    sm.set_defaults(func=cmd_simulate, seed=0)

    a = sub.add_parser("audit", parents=[common], help="audit a wire capture for privacy compliance")
    a.add_argument("capture")
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (MaskPrivError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
