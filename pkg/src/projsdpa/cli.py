"""Command-line entry point: equiv-check, gradcheck, train, translate, bench.

Exit codes: 0 success, 1 verification failure, 2 config/usage error,
3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .attention import equivalence_residual
from .config import RunConfig
from .data import (
    DataError,
    EncodedSplit,
    Vocabulary,
    build_vocabs,
    encode_source,
    load_parallel_corpus,
    make_copy_task,
    split_dataset,
)
from .gradcheck import AUDIT_FLOOR, gradient_audit, micro_config
from .model import ConfigError, TransformerParams, greedy_decode, load_checkpoint
from .numerics import DegenerateRowError, RngState, rng_integers, rng_normal
from .training import train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4

SEED_ENV = "PROJSDPA_SEED"
EQUIV_TOL = 1e-9
GRADCHECK_TOL = 1e-3

log = logging.getLogger("projsdpa")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _positive_float(s: str) -> float:
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {s}")
    return v


def _int_list(s: str) -> list[int]:
    try:
        vals = [int(x) for x in s.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s}") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return vals


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_equiv_check(args) -> int:
    rng = RngState(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        t_q, t_k = (int(x) for x in rng_integers(rng, 1, args.max_t + 1, 2))
        d = int(rng_integers(rng, 1, args.max_d + 1, 1)[0])
        q = rng_normal(rng, (t_q, d))
        k = rng_normal(rng, (t_k, d))
        worst = max(worst, equivalence_residual(q, k, args.sigma2, args.scale))
    ok = worst < EQUIV_TOL
    print(f"trials={args.trials} max_t={args.max_t} max_d={args.max_d} sigma2={args.sigma2:g} scale={args.scale:g}")
    print(f"max_residual={worst:.3e} tolerance={EQUIV_TOL:g} {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    if args.config is not None:
        run = RunConfig.load(args.config)
        # sizes stay micro; attention settings come from the config
        overrides = dict(
            sigma2_self=run.sigma2_self, sigma2_cross=run.sigma2_cross, normalize_rows=run.normalize_rows,
            attention_scale=run.attention_scale, learn_sigma2=run.learn_sigma2, ln_eps=run.ln_eps,
        )
        variants = [run.variant] if args.variant == "config" else _variants(args.variant)
    else:
        overrides = {}
        variants = _variants("both" if args.variant == "config" else args.variant)
    worst_all = 0.0
    for variant in variants:
        cfg = micro_config(variant, seed=args.seed, **overrides)
        report = gradient_audit(cfg, seed=args.seed)
        for name, err in report.items():
            flag = "ok" if err < GRADCHECK_TOL else "FAIL"
            print(f"{variant}\t{name}\t{err:.3e}\t{flag}")
        worst = max(report.values())
        worst_all = max(worst_all, worst)
        print(f"{variant}: max_rel_error={worst:.3e} tolerance={GRADCHECK_TOL:g} norm_floor={AUDIT_FLOOR:g}")
    ok = worst_all < GRADCHECK_TOL
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAIL


def _variants(choice: str) -> list[str]:
    return ["standard", "projection"] if choice == "both" else [choice]


def _load_pairs(run: RunConfig, data_path):
    if data_path is not None:
        pairs = list(load_parallel_corpus(data_path))
    elif run.task == "copy":
        pairs = make_copy_task(run.copy_vocab, run.copy_len, run.copy_pairs, seed=run.seed, min_len=run.copy_min_len)
    else:
        raise ConfigError("task 'corpus' needs --data")
    if run.max_pairs is not None:
        pairs = pairs[: run.max_pairs]
    return pairs


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    pairs = _load_pairs(run, args.data)
    train_pairs, val_pairs, test_pairs = split_dataset(pairs, run.split, seed=run.seed)
    if not train_pairs:
        raise DataError("training split is empty")
    cap = run.copy_vocab if (run.task == "copy" and args.data is None) else run.vocab_cap
    src_vocab, tgt_vocab = build_vocabs(train_pairs, cap)
    model_cfg = run.model_config(len(src_vocab), len(tgt_vocab))
    splits = [EncodedSplit.from_pairs(p, src_vocab, tgt_vocab, run.max_len) for p in (train_pairs, val_pairs, test_pairs)]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True) + "\n")
    params = TransformerParams.init(model_cfg)
    records = train(
        params, model_cfg, splits[0], splits[1], run.train_config(out / "metrics.csv"),
        test_data=splits[2], checkpoint_path=out / "checkpoint.npz", vocabs=(src_vocab, tgt_vocab),
    )
    val = [r for r in records if r.split == "val"]
    final = val[-1] if val else [r for r in records if r.split == "train"][-1]
    print(f"pairs={len(pairs)} train={len(train_pairs)} val={len(val_pairs)} test={len(test_pairs)} "
          f"params={params.num_parameters()} variant={model_cfg.variant.value}")
    print(f"final {final.split} loss={final.loss:.6g} accuracy={final.accuracy:.6g}")
    print(f"metrics: {out / 'metrics.csv'}\ncheckpoint: {out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_translate(args) -> int:
    try:
        params, cfg, extra = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    if "src_tokens" not in extra or "tgt_tokens" not in extra:
        raise ConfigError("checkpoint carries no vocabulary")
    src_vocab, tgt_vocab = Vocabulary(extra["src_tokens"]), Vocabulary(extra["tgt_tokens"])
    if len(src_vocab) != cfg.src_vocab or len(tgt_vocab) != cfg.tgt_vocab:
        raise ConfigError("checkpoint vocabulary does not match its model config")
    src = encode_source(args.input, src_vocab, cfg.max_len)
    ids = greedy_decode(src, params, cfg, args.max_steps)
    print(" ".join(tgt_vocab.decode(ids)))
    return EXIT_OK


def cmd_bench(args) -> int:
    variants = ["standard", "projection"] if args.variant == "both" else [args.variant]
    if args.retain_memory:
        allocator = "freed memory retained" if bench_mod.retain_freed_memory() else "default (retention unsupported)"
    else:
        allocator = "default"
    rows = bench_mod.run_benchmark(
        args.sizes, d=args.d, heads=args.heads, variants=variants, reps=args.reps,
        sigma2=args.sigma2, seed=args.seed, threads=args.threads,
    )
    sys.stdout.write(bench_mod.format_bench_csv(rows, args.threads, allocator))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="projsdpa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("equiv-check", help="standard vs projection SDPA on random unit-norm inputs")
    e.add_argument("--trials", type=_positive_int, default=1000)
    e.add_argument("--max-t", type=_positive_int, default=32)
    e.add_argument("--max-d", type=_positive_int, default=16)
    e.add_argument("--sigma2", type=_positive_float, default=1.0)
    e.add_argument("--scale", type=_positive_float, default=1.0)
    e.add_argument("--seed", type=int, default=_default_seed())
    e.set_defaults(func=cmd_equiv_check)

    g = sub.add_parser("gradcheck", help="finite-difference audit of every model parameter")
    g.add_argument("--config", type=Path, default=None)
    g.add_argument("--variant", choices=["config", "both", "standard", "projection"], default="config")
    g.add_argument("--seed", type=int, default=_default_seed())
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train a model and write metrics.csv + checkpoint.npz")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--data", type=Path, default=None)
    t.add_argument("--out", type=Path, required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("translate", help="greedy-decode one input with a trained checkpoint")
    r.add_argument("--checkpoint", type=Path, required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--max-steps", type=_positive_int, default=None)
    r.set_defaults(func=cmd_translate)

    b = sub.add_parser("bench", help="time both attention kernels; CSV on stdout")
    b.add_argument("--sizes", type=_int_list, default=[32, 64, 128, 256])
    b.add_argument("--d", type=_positive_int, default=64)
    b.add_argument("--heads", type=_positive_int, default=8)
    b.add_argument("--variant", choices=["both", "standard", "projection"], default="both")
    b.add_argument("--reps", type=_positive_int, default=20)
    b.add_argument("--sigma2", type=_positive_float, default=1.0)
    b.add_argument("--threads", type=_positive_int, default=1)
    b.add_argument("--seed", type=int, default=_default_seed())
    b.add_argument("--no-retain-memory", dest="retain_memory", action="store_false",
                   help="leave the allocator alone (timings then include page-fault cost)")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, DegenerateRowError, np.linalg.LinAlgError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
