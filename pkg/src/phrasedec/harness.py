"""Experiment harness: configuration, corpus and model I/O, benchmark and
ablation-sweep runners, and plot-data emission.

All runs are seed-total: every output artifact embeds the resolved config
including the seed, and modes inside one benchmark share identical per-decode
seeds so their metrics are directly comparable.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .core import CategoricalDistribution, TokenSequence, normalize
from .decoder import MODES, DecodeMetrics, VerifyConfig, decode
from .models import (
    MarkovModel,
    ancestral_sample,
    load_markov,
    markov_contexts,
    random_markov,
)
from .phrase_lib import (
    PhraseLibrary,
    build_library,
    read_corpus,
)
from . import theory

REPORT_VERSION = 1


class ConfigInvalid(ValueError):
    """Experiment configuration is inconsistent or references missing files."""


class CapacityExceeded(ValueError):
    """Requested phrases do not fit the vocabulary's transition contexts."""


@dataclass
class ExperimentConfig:
    seed: int = 0
    # model source: an explicit PSDM file, the planted-phrase generator, or
    # a plain random Markov model (planted=False, no model_path)
    model_path: str | None = None
    corpus_path: str | None = None
    planted: bool = True
    order: int = 2
    vocab_size: int = 32
    concentration: float = 0.3
    phrase_count: int = 6
    phrase_len: int = 5
    planting_rate: float = 0.95
    corpus_sequences: int = 200
    corpus_seq_len: int = 256
    # decode settings
    modes: tuple[str, ...] = ("sjd", "sjd_pv")
    total_len: int = 256
    decodes: int = 50
    window_size: int = 16
    tau: float = 0.01
    merges: int = 256
    max_phrase_len: int = 8
    out_dir: str | None = None

    def validate(self) -> None:
        for mode in self.modes:
            if mode not in MODES:
                raise ConfigInvalid(f"unknown decode mode {mode!r}")
        if not self.modes:
            raise ConfigInvalid("at least one decode mode is required")
        for path in (self.model_path, self.corpus_path):
            if path is not None and not os.path.exists(path):
                raise ConfigInvalid(f"referenced file does not exist: {path}")
        if self.decodes < 1 or self.total_len < 1 or self.window_size < 1:
            raise ConfigInvalid("decodes, total_len and window_size must be >= 1")
        if self.merges < 0:
            raise ConfigInvalid("merges must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ConfigInvalid("tau must be in (0, 1)")

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["modes"] = list(self.modes)
        return d


_LIST_KEYS = {"modes"}


def load_config_file(path) -> dict[str, str]:
    """Parse a flat key=value config file; '#' lines are comments."""
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in fields:
            raise ConfigInvalid(f"unknown config key {key!r}")
        if value is None:
            continue
        try:
            kwargs[key] = _coerce(key, value, fields[key].type)
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad value for {key!r}: {value!r}") from exc
    cfg = ExperimentConfig(**kwargs)
    cfg.validate()
    return cfg


def _coerce(key: str, value, type_hint: str):
    if key in _LIST_KEYS:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        return tuple(value)
    if not isinstance(value, str):
        return value
    if "bool" in type_hint:
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ValueError(value)
    if "int" in type_hint:
        return int(value)
    if "float" in type_hint:
        return float(value)
    return value


def planted_phrase_corpus(
    vocab_size: int,
    phrase_count: int,
    phrase_len: int,
    sequences: int,
    seq_len: int,
    planting_rate: float,
    rng: np.random.Generator,
    concentration: float = 0.3,
) -> tuple[list[TokenSequence], MarkovModel]:
    """Synthesize a corpus whose generating model deterministically continues
    planted multi-token phrases.

    The model is an order-2 Markov chain: whenever the most recent token is a
    non-final phrase token, the next phrase token follows with probability
    planting_rate and the rest of the mass is a context-specific Dirichlet
    row.  Phrases occupy disjoint token blocks, so continuation is
    unambiguous; the context-specific noise makes verifier and drafter rows
    differ mildly during decoding, which is the regime phrase verification
    exploits.
    """
    if phrase_len < 2:
        raise ConfigInvalid("phrase_len must be >= 2")
    if not 0.0 < planting_rate <= 1.0:
        raise ConfigInvalid("planting_rate must be in (0, 1]")
    if sequences < 1 or seq_len < 1:
        raise ConfigInvalid("sequences and seq_len must be >= 1")
    needed = phrase_count * phrase_len
    if needed > vocab_size * vocab_size:
        raise CapacityExceeded(
            f"{needed} phrase tokens exceed the {vocab_size * vocab_size} available contexts"
        )
    if needed > vocab_size:
        raise CapacityExceeded(
            f"{needed} phrase tokens need disjoint blocks in a vocabulary of {vocab_size}"
        )

    perm = [int(t) for t in rng.permutation(vocab_size)]
    next_in_phrase: dict[int, int] = {}
    for i in range(phrase_count):
        block = perm[i * phrase_len : (i + 1) * phrase_len]
        for a, b in zip(block, block[1:]):
            next_in_phrase[a] = b

    order = 2
    alpha = np.full(vocab_size, concentration)
    table: dict[tuple[int, ...], CategoricalDistribution] = {}
    for ctx in markov_contexts(order, vocab_size):
        noise = rng.dirichlet(alpha)
        last = ctx[-1]
        nxt = next_in_phrase.get(last)
        if nxt is None:
            table[ctx] = normalize(noise)
        else:
            row = (1.0 - planting_rate) * noise
            row[nxt] += planting_rate
            table[ctx] = normalize(row)
    model = MarkovModel(order, vocab_size, table)

    corpus = [ancestral_sample(model, seq_len, rng) for _ in range(sequences)]
    return corpus, model


def _resolve_model_and_corpus(
    cfg: ExperimentConfig,
) -> tuple[MarkovModel, list[TokenSequence]]:
    rng = np.random.default_rng([cfg.seed, 0])
    if cfg.model_path is not None:
        model = load_markov(cfg.model_path)
        if cfg.corpus_path is not None:
            corpus = read_corpus(cfg.corpus_path)
        else:
            corpus = [
                ancestral_sample(model, cfg.corpus_seq_len, rng)
                for _ in range(cfg.corpus_sequences)
            ]
        return model, corpus
    if cfg.planted:
        corpus, model = planted_phrase_corpus(
            cfg.vocab_size,
            cfg.phrase_count,
            cfg.phrase_len,
            cfg.corpus_sequences,
            cfg.corpus_seq_len,
            cfg.planting_rate,
            rng,
            concentration=cfg.concentration,
        )
    else:
        model = random_markov(cfg.order, cfg.vocab_size, cfg.concentration, rng)
        corpus = [
            ancestral_sample(model, cfg.corpus_seq_len, rng)
            for _ in range(cfg.corpus_sequences)
        ]
    if cfg.corpus_path is not None:
        corpus = read_corpus(cfg.corpus_path)
    return model, corpus


def _library_for(cfg: ExperimentConfig, corpus, vocab_size: int, merges=None) -> PhraseLibrary:
    merges = cfg.merges if merges is None else merges
    if merges == 0:
        return PhraseLibrary(vocab_size, (), ())
    return build_library(corpus, merges, cfg.max_phrase_len, vocab_size=vocab_size)


@dataclass
class ModeAggregate:
    mode: str
    runs: int
    mean_nfe: float
    mean_tokens_per_iteration: float
    token_accept_rate: float
    phrase_attempts: int
    phrase_accepts: int
    phrase_accept_rate: float
    wall_clock_s: float
    rows: list[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class BenchmarkReport:
    config: dict
    per_mode: dict[str, ModeAggregate]
    acceleration: dict[str, float]
    report_version: int = REPORT_VERSION

    def as_dict(self) -> dict:
        return {
            "report_version": self.report_version,
            "config": self.config,
            "per_mode": {m: agg.as_dict() for m, agg in self.per_mode.items()},
            "acceleration": self.acceleration,
        }


def _run_mode(
    model,
    lib: PhraseLibrary | None,
    cfg: ExperimentConfig,
    mode: str,
    tau: float | None = None,
) -> tuple[ModeAggregate, list[TokenSequence]]:
    vcfg = VerifyConfig(
        mode=mode,
        window_size=cfg.window_size,
        tau=cfg.tau if tau is None else tau,
        max_phrase_len=cfg.max_phrase_len,
    )
    rows: list[dict] = []
    outputs: list[TokenSequence] = []
    totals = DecodeMetrics()
    start = time.perf_counter()
    for run in range(cfg.decodes):
        rng = np.random.default_rng([cfg.seed, 1, run])
        seq, metrics = decode(
            model, lib if mode == "sjd_pv" else None, vcfg, cfg.total_len, rng
        )
        outputs.append(seq)
        totals.merge(metrics)
        rows.append(
            {
                "mode": mode,
                "run": run,
                "nfe": metrics.nfe,
                "iterations": metrics.iterations,
                "tokens_emitted": metrics.tokens_emitted,
                "token_accepts": metrics.token_accepts,
                "token_rejects": metrics.token_rejects,
                "phrase_attempts": metrics.phrase_attempts,
                "phrase_accepts": metrics.phrase_accepts,
            }
        )
    wall = time.perf_counter() - start
    token_trials = totals.token_accepts + totals.token_rejects
    agg = ModeAggregate(
        mode=mode,
        runs=cfg.decodes,
        mean_nfe=totals.nfe / cfg.decodes,
        mean_tokens_per_iteration=(
            totals.tokens_emitted / totals.nfe if totals.nfe else 0.0
        ),
        token_accept_rate=(totals.token_accepts / token_trials if token_trials else 0.0),
        phrase_attempts=totals.phrase_attempts,
        phrase_accepts=totals.phrase_accepts,
        phrase_accept_rate=(
            totals.phrase_accepts / totals.phrase_attempts
            if totals.phrase_attempts
            else 0.0
        ),
        wall_clock_s=wall,
        rows=rows,
    )
    return agg, outputs


def run_benchmark(cfg: ExperimentConfig) -> BenchmarkReport:
    """Matched-seed decodes for each configured mode over one target model."""
    cfg.validate()
    model, corpus = _resolve_model_and_corpus(cfg)
    lib = None
    if "sjd_pv" in cfg.modes:
        lib = _library_for(cfg, corpus, model.vocab_size)

    per_mode: dict[str, ModeAggregate] = {}
    for mode in cfg.modes:
        per_mode[mode], _ = _run_mode(model, lib, cfg, mode)

    base = cfg.modes[0]
    base_nfe = per_mode[base].mean_nfe
    acceleration = {
        mode: (base_nfe / agg.mean_nfe if agg.mean_nfe else float("nan"))
        for mode, agg in per_mode.items()
    }
    report = BenchmarkReport(cfg.as_dict(), per_mode, acceleration)
    if cfg.out_dir:
        _write_report(report, cfg.out_dir)
    return report


def _write_report(report: BenchmarkReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2)
        f.write("\n")
    rows = [row for agg in report.per_mode.values() for row in agg.rows]
    emit_plot_data(rows, os.path.join(out_dir, "report.csv"))


def marginal_tv(seqs_a, seqs_b, vocab_size: int) -> np.ndarray:
    """Per-position total-variation distance between two sets of equal-length
    sequences' empirical marginals."""
    a = np.asarray(seqs_a)
    b = np.asarray(seqs_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("sequence sets must share a common length")
    out = np.empty(a.shape[1])
    for pos in range(a.shape[1]):
        fa = np.bincount(a[:, pos], minlength=vocab_size) / a.shape[0]
        fb = np.bincount(b[:, pos], minlength=vocab_size) / b.shape[0]
        out[pos] = 0.5 * np.abs(fa - fb).sum()
    return out


def run_tau_sweep(cfg: ExperimentConfig, taus) -> list[dict]:
    """One phrase-verification benchmark row per neighborhood threshold,
    with fixed seeds and a shared model, corpus, and library across rows."""
    taus = list(taus)
    if not taus:
        raise ConfigInvalid("tau grid must be non-empty")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ConfigInvalid("tau grid must be strictly ascending")
    cfg.validate()
    model, corpus = _resolve_model_and_corpus(cfg)
    lib = _library_for(cfg, corpus, model.vocab_size)

    ref_rng = np.random.default_rng([cfg.seed, 2])
    reference = [
        ancestral_sample(model, cfg.total_len, ref_rng) for _ in range(cfg.decodes)
    ]

    rows = []
    for tau in taus:
        agg, outputs = _run_mode(model, lib, cfg, "sjd_pv", tau=tau)
        divergence = float(marginal_tv(outputs, reference, model.vocab_size).mean())
        rows.append(
            {
                "tau": tau,
                "mean_nfe": agg.mean_nfe,
                "phrase_accept_rate": agg.phrase_accept_rate,
                "seq_divergence": divergence,
            }
        )
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        emit_plot_data(rows, os.path.join(cfg.out_dir, "tau_sweep.csv"))
    return rows


def run_merge_sweep(cfg: ExperimentConfig, merge_counts) -> list[dict]:
    """Rebuild the library per merge budget and benchmark on matched seeds."""
    merge_counts = list(merge_counts)
    if not merge_counts:
        raise ConfigInvalid("merge grid must be non-empty")
    cfg.validate()
    model, corpus = _resolve_model_and_corpus(cfg)

    rows = []
    for merges in merge_counts:
        lib = _library_for(cfg, corpus, model.vocab_size, merges=merges)
        agg, _ = _run_mode(model, lib, cfg, "sjd_pv")
        rows.append(
            {
                "merges": merges,
                "library_size": len(lib.rules),
                "mean_nfe": agg.mean_nfe,
                "phrase_hit_rate": (
                    agg.phrase_accepts / (agg.mean_nfe * cfg.decodes)
                    if agg.mean_nfe
                    else 0.0
                ),
            }
        )
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        emit_plot_data(rows, os.path.join(cfg.out_dir, "merge_sweep.csv"))
    return rows


def emit_plot_data(rows, out_path) -> None:
    """Write tabular series as UTF-8, LF-terminated CSV.

    Accepts a list of homogeneous dicts, or ((left, right), count) pairs as
    produced by the co-occurrence statistics.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("nothing to emit: input is empty")
    if not isinstance(rows[0], dict):
        rows = [
            {"rank": i, "left": pair[0], "right": pair[1], "count": count}
            for i, (pair, count) in enumerate(rows, 1)
        ]
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def theory_check(
    trials: int = 1000,
    v_max: int = 8,
    l_max: int = 3,
    min_inequality_trials: int = 10**5,
    seed: int = 0,
    histogram_bins: int = 20,
) -> dict:
    """JSON-ready report over the acceptance-rate oracles."""
    rng = np.random.default_rng([seed, 3])
    summary = theory.proposition1_sweep(trials, v_max, l_max, rng)
    counts, edges = np.histogram(summary.gaps, bins=histogram_bins)

    failures = 0
    for _ in range(min_inequality_trials):
        length = int(rng.integers(1, 9))
        ratios = 10.0 ** rng.uniform(-6.0, 6.0, size=length)
        if not theory.min_inequality_check(ratios).holds:
            failures += 1

    return {
        "trials": summary.trials,
        "violations": summary.violations,
        "gap_histogram": {
            "bin_edges": [float(e) for e in edges],
            "counts": [int(c) for c in counts],
        },
        "min_inequality_trials": {
            "trials": min_inequality_trials,
            "failures": failures,
        },
    }
