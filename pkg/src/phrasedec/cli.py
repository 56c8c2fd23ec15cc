"""Command-line entry point.

Verbs: build-library, decode, bench, sweep-tau, sweep-merges, theory-check,
cooc-stats.  Global flags --seed, --config <path> and --out <dir> apply to
every verb; the config file is a flat key=value text file whose keys mirror
ExperimentConfig.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import harness
from .decoder import MODES, VerifyConfig, decode
from .models import load_markov, save_markov
from .phrase_lib import (
    build_library,
    cooccurrence_stats,
    load_library,
    read_corpus,
    save_library,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phrasedec",
        description="Phrase-level speculative Jacobi decoding engine",
    )
    parser.add_argument("--seed", type=int, default=None, help="master RNG seed")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out", dest="out_dir", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-library", help="learn a phrase library from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--merges", type=int, default=256)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--out", dest="library_out", required=True)

    p = sub.add_parser("decode", help="decode one sequence and print metrics")
    p.add_argument("--model", required=True, help="PSDM model file")
    p.add_argument("--mode", choices=MODES, default="sjd")
    p.add_argument("--length", type=int, default=256)
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--lib", default=None, help="PSDL library file (sjd_pv mode)")
    p.add_argument("--greedy", action="store_true")

    p = sub.add_parser("bench", help="paired benchmark across decode modes")
    p.add_argument("--modes", default=None, help="comma-separated mode list")

    p = sub.add_parser("sweep-tau", help="neighborhood-threshold ablation")
    p.add_argument("--taus", default="0.005,0.01,0.02,0.05")

    p = sub.add_parser("sweep-merges", help="merge-iteration ablation")
    p.add_argument("--merge-grid", default="256,1024,2048")

    p = sub.add_parser("theory-check", help="acceptance-rate oracle report")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--v-max", type=int, default=8)
    p.add_argument("--l-max", type=int, default=3)
    p.add_argument("--min-ineq-trials", type=int, default=100000)

    p = sub.add_parser("cooc-stats", help="adjacent-pair co-occurrence counts")
    p.add_argument("--corpus", required=True)
    p.add_argument("--top-n", type=int, default=500)

    p = sub.add_parser("gen-model", help="generate and save a planted-phrase model")
    p.add_argument("--model-out", required=True)
    p.add_argument("--corpus-out", default=None)

    return parser


def _experiment_config(args) -> harness.ExperimentConfig:
    mapping: dict = {}
    if args.config:
        mapping.update(harness.load_config_file(args.config))
    if args.seed is not None:
        mapping["seed"] = args.seed
    if args.out_dir is not None:
        mapping["out_dir"] = args.out_dir
    if getattr(args, "modes", None):
        mapping["modes"] = args.modes
    return harness.config_from_mapping(mapping)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "build-library":
        corpus = read_corpus(args.corpus)
        lib = build_library(corpus, args.merges, args.max_len)
        save_library(lib, args.library_out)
        print(
            f"library: {len(lib.rules)} rules, {len(lib.phrases)} phrases "
            f"-> {args.library_out}"
        )
        return 0

    if args.command == "decode":
        model = load_markov(args.model)
        lib = load_library(args.lib) if args.lib else None
        cfg = VerifyConfig(
            mode=args.mode, window_size=args.window, tau=args.tau, greedy=args.greedy
        )
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        seq, metrics = decode(model, lib, cfg, args.length, rng)
        print(" ".join(str(t) for t in seq))
        print(
            json.dumps(
                {
                    "nfe": metrics.nfe,
                    "tokens_emitted": metrics.tokens_emitted,
                    "token_accepts": metrics.token_accepts,
                    "token_rejects": metrics.token_rejects,
                    "phrase_attempts": metrics.phrase_attempts,
                    "phrase_accepts": metrics.phrase_accepts,
                }
            ),
            file=sys.stderr,
        )
        return 0

    if args.command == "bench":
        cfg = _experiment_config(args)
        report = harness.run_benchmark(cfg)
        for mode, agg in report.per_mode.items():
            print(
                f"{mode}: mean NFE {agg.mean_nfe:.2f}, "
                f"{agg.mean_tokens_per_iteration:.2f} tokens/iteration, "
                f"acceleration {report.acceleration[mode]:.3f}x"
            )
        return 0

    if args.command == "sweep-tau":
        cfg = _experiment_config(args)
        taus = [float(v) for v in args.taus.split(",") if v.strip()]
        for row in harness.run_tau_sweep(cfg, taus):
            print(
                f"tau={row['tau']}: mean NFE {row['mean_nfe']:.2f}, "
                f"phrase accept rate {row['phrase_accept_rate']:.3f}, "
                f"divergence {row['seq_divergence']:.4f}"
            )
        return 0

    if args.command == "sweep-merges":
        cfg = _experiment_config(args)
        grid = [int(v) for v in args.merge_grid.split(",") if v.strip()]
        for row in harness.run_merge_sweep(cfg, grid):
            print(
                f"M={row['merges']}: library {row['library_size']}, "
                f"mean NFE {row['mean_nfe']:.2f}, "
                f"phrase hits/iteration {row['phrase_hit_rate']:.3f}"
            )
        return 0

    if args.command == "theory-check":
        report = harness.theory_check(
            trials=args.trials,
            v_max=args.v_max,
            l_max=args.l_max,
            min_inequality_trials=args.min_ineq_trials,
            seed=args.seed if args.seed is not None else 0,
        )
        text = json.dumps(report, indent=2)
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            path = os.path.join(args.out_dir, "theory_check.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write(text + "\n")
            print(f"wrote {path}")
        else:
            print(text)
        return 0

    if args.command == "cooc-stats":
        corpus = read_corpus(args.corpus)
        stats = cooccurrence_stats(corpus, args.top_n)
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            path = os.path.join(args.out_dir, "cooc_stats.csv")
            harness.emit_plot_data(stats, path)
            print(f"wrote {path}")
        else:
            for rank, (pair, count) in enumerate(stats, 1):
                print(f"{rank},{pair[0]},{pair[1]},{count}")
        return 0

    if args.command == "gen-model":
        cfg = _experiment_config(args)
        rng = np.random.default_rng([cfg.seed, 0])
        corpus, model = harness.planted_phrase_corpus(
            cfg.vocab_size,
            cfg.phrase_count,
            cfg.phrase_len,
            cfg.corpus_sequences,
            cfg.corpus_seq_len,
            cfg.planting_rate,
            rng,
            concentration=cfg.concentration,
        )
        save_markov(model, args.model_out)
        print(f"wrote {args.model_out}")
        if args.corpus_out:
            from .phrase_lib import write_corpus

            write_corpus(corpus, args.corpus_out)
            print(f"wrote {args.corpus_out}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    raise SystemExit(main())
