import math

import numpy as np
import pytest

from phrasedec import decoder
from phrasedec.core import (
    LOG_FLOOR,
    CategoricalDistribution,
    DrafterZeroProb,
    normalize,
)
from phrasedec.decoder import (
    DecodeMetrics,
    DegenerateResidual,
    JacobiWindow,
    NonTermination,
    VerifyConfig,
    build_neighborhood,
    decode,
    phrase_acceptance_score,
    verify_phrase,
    verify_token,
    verify_window,
)
from phrasedec.models import batched_conditionals, random_markov
from phrasedec.phrase_lib import Phrase, PhraseLibrary, build_library


def dist(probs):
    return CategoricalDistribution(probs)


class TestBuildNeighborhood:
    P = dist([0.40, 0.39, 0.21])

    def test_hand_enumeration(self):
        assert build_neighborhood(self.P, 0, 0.02).members == {0, 1}

    def test_strict_inequality_boundary(self):
        assert build_neighborhood(self.P, 0, 0.01).members == {0}

    def test_uniform_full_vocabulary(self):
        uniform = dist([0.25] * 4)
        assert build_neighborhood(uniform, 2, 0.001).members == {0, 1, 2, 3}

    def test_contains_drafted(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = normalize(rng.random(6) + 1e-9)
            drafted = int(rng.integers(6))
            assert drafted in build_neighborhood(p, drafted, 0.005)

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = normalize(rng.random(8) + 1e-9)
            drafted = int(rng.integers(8))
            small = build_neighborhood(p, drafted, 0.01).members
            large = build_neighborhood(p, drafted, 0.05).members
            assert small <= large


class TestPhraseScore:
    def test_identity_distributions(self):
        p = dist([0.6, 0.4])
        phrase = Phrase((0, 1), 1, 1)
        assert phrase_acceptance_score([p, p], [p, p], phrase) == 0.0

    def test_hand_product(self):
        # ratios 1.4 and 0.6 -> ln(0.84)
        p = [dist([0.7, 0.3]), dist([0.3, 0.7])]
        q = [dist([0.5, 0.5]), dist([0.5, 0.5])]
        phrase = Phrase((0, 0), 1, 1)
        score = phrase_acceptance_score(p, q, phrase)
        assert score == pytest.approx(math.log(0.84), rel=1e-12)

    def test_impossible_token_floor(self):
        p = [dist([1.0, 0.0]), dist([0.5, 0.5])]
        q = [dist([0.5, 0.5]), dist([0.5, 0.5])]
        phrase = Phrase((1, 0), 1, 1)
        score = phrase_acceptance_score(p, q, phrase)
        assert score == LOG_FLOOR
        # exp of the floor is the smallest subnormal double: acceptance
        # probability is effectively zero
        assert math.exp(score) <= 5e-324

    def test_drafter_zero_propagates(self):
        p = [dist([0.5, 0.5])]
        q = [dist([1.0, 0.0])]
        with pytest.raises(DrafterZeroProb):
            phrase_acceptance_score(p, q, Phrase((1,), 1, 1))


class TestVerifyPhrase:
    def test_zero_score_always_accepts(self):
        rng = np.random.default_rng(0)
        assert all(verify_phrase(0.0, rng) for _ in range(1000))

    def test_floor_never_accepts(self):
        rng = np.random.default_rng(1)
        assert not any(verify_phrase(LOG_FLOOR, rng) for _ in range(1000))

    def test_monte_carlo_frequency(self):
        rng = np.random.default_rng(2)
        n = 10**5
        hits = sum(verify_phrase(math.log(0.84), rng) for _ in range(n))
        assert abs(hits / n - 0.84) < 0.01


class TestVerifyToken:
    def test_identity_always_accepts(self):
        p = dist([0.3, 0.7])
        rng = np.random.default_rng(0)
        for _ in range(500):
            accepted, emitted = verify_token(p, p, 1, rng)
            assert accepted and emitted == 1

    def test_residual_formula(self):
        p, q = dist([0.7, 0.3]), dist([0.5, 0.5])
        rng = np.random.default_rng(3)
        n = 10**5
        accepts = 0
        for _ in range(n):
            accepted, emitted = verify_token(p, q, 1, rng)
            if accepted:
                accepts += 1
                assert emitted == 1
            else:
                # residual normalize(max(0, p - q)) = [1, 0]
                assert emitted == 0
        assert abs(accepts / n - 0.6) < 0.01

    def test_zero_target_mass_always_rejects(self):
        p, q = dist([1.0, 0.0]), dist([0.5, 0.5])
        rng = np.random.default_rng(4)
        for _ in range(200):
            accepted, emitted = verify_token(p, q, 1, rng)
            assert not accepted and emitted == 0

    def test_zero_drafter_prob(self):
        p, q = dist([0.5, 0.5]), dist([1.0, 0.0])
        with pytest.raises(DrafterZeroProb):
            verify_token(p, q, 1, np.random.default_rng(0))

    def test_degenerate_residual_guard(self):
        class RiggedRng:
            def random(self):
                return 1.0  # unreachable for a real generator

        p = dist([0.5, 0.5])
        with pytest.raises(DegenerateResidual):
            verify_token(p, p, 0, RiggedRng())


class TestVerifyWindow:
    def test_greedy_fixed_point_commits_whole_window(self):
        model = random_markov(1, 4, 0.4, np.random.default_rng(8))
        cfg = VerifyConfig(mode="sjd", window_size=6, greedy=True)
        prefix = (0,)
        drafts = []
        ctx = prefix
        for _ in range(6):
            drafts.append(int(np.argmax(model.conditional(ctx).probs)))
            ctx = ctx + (drafts[-1],)
        dists = batched_conditionals(model, prefix, tuple(drafts))
        window = JacobiWindow(tuple(drafts), tuple(dists), len(prefix))
        committed, _, delta = verify_window(
            prefix, window, model, None, cfg, np.random.default_rng(0)
        )
        assert committed == tuple(drafts)
        assert delta.nfe == 1
        assert delta.token_accepts == 6

    def test_identity_distributions_phrase_accept(self):
        model = random_markov(1, 4, 0.4, np.random.default_rng(12))
        prefix = ()
        drafts = (1, 2, 3)
        dists = batched_conditionals(model, prefix, drafts)
        window = JacobiWindow(drafts, tuple(dists), 0)
        lib = PhraseLibrary(4, (), (Phrase(drafts, 1, 1),))
        cfg = VerifyConfig(mode="sjd_pv", window_size=3, tau=0.5)
        committed, _, delta = verify_window(
            prefix, window, model, lib, cfg, np.random.default_rng(0)
        )
        assert delta.phrase_attempts == 1
        assert delta.phrase_accepts == 1
        assert committed[:3] == drafts

    def test_sjd_pv_requires_library(self):
        model = random_markov(1, 2, 1.0, np.random.default_rng(0))
        row = model.conditional(())
        window = JacobiWindow((0,), (row,), 0)
        with pytest.raises(ValueError):
            verify_window((), window, model, None, VerifyConfig(mode="sjd_pv"),
                          np.random.default_rng(0))


class TestDecode:
    def test_window_one_degenerates_to_ancestral(self):
        model = random_markov(1, 3, 0.7, np.random.default_rng(2))
        cfg = VerifyConfig(mode="sjd", window_size=1)
        seq, metrics = decode(model, None, cfg, 32, np.random.default_rng(0))
        assert len(seq) == 32
        assert metrics.nfe == 32

    def test_nfe_equals_iterations(self):
        model = random_markov(1, 4, 0.5, np.random.default_rng(6))
        cfg = VerifyConfig(mode="sjd", window_size=8)
        _, metrics = decode(model, None, cfg, 100, np.random.default_rng(1))
        assert metrics.nfe == metrics.iterations
        assert metrics.tokens_emitted == sum(metrics.tokens_per_iteration) == 100

    def test_greedy_jacobi_matches_sequential_greedy(self):
        for seed in range(5):
            model = random_markov(1, 6, 0.4, np.random.default_rng(seed))
            n = 48
            sequential = []
            for _ in range(n):
                row = model.conditional(tuple(sequential))
                sequential.append(int(np.argmax(row.probs)))
            cfg = VerifyConfig(mode="jacobi", window_size=8, greedy=True)
            seq, metrics = decode(model, None, cfg, n, np.random.default_rng(0))
            assert list(seq) == sequential
            assert metrics.iterations <= n

    def test_sjd_preserves_marginals(self):
        # light version of the losslessness check; the acceptance suite runs
        # the full-scale criterion
        model = random_markov(1, 3, 0.6, np.random.default_rng(4))
        n, runs = 12, 3000
        cfg = VerifyConfig(mode="sjd", window_size=4)
        from phrasedec.models import ancestral_sample

        rng_a, rng_b = np.random.default_rng(10), np.random.default_rng(11)
        decoded = np.array([decode(model, None, cfg, n, rng_a)[0] for _ in range(runs)])
        reference = np.array([ancestral_sample(model, n, rng_b) for _ in range(runs)])
        for pos in range(n):
            fa = np.bincount(decoded[:, pos], minlength=3) / runs
            fb = np.bincount(reference[:, pos], minlength=3) / runs
            assert 0.5 * np.abs(fa - fb).sum() < 0.05

    def test_non_termination_guard(self, monkeypatch):
        model = random_markov(1, 2, 1.0, np.random.default_rng(0))

        def stuck(prefix, window, target, lib, cfg, rng):
            return (), window, DecodeMetrics(nfe=1, tokens_per_iteration=[0])

        monkeypatch.setattr(decoder, "verify_window", stuck)
        with pytest.raises(NonTermination):
            decode(model, None, VerifyConfig(mode="sjd"), 4, np.random.default_rng(0))

    def test_phrase_mode_reduces_nfe_on_planted_benchmark(self):
        from phrasedec.harness import planted_phrase_corpus

        corpus, model = planted_phrase_corpus(
            32, 6, 5, 40, 192, 0.95, np.random.default_rng(21)
        )
        lib = build_library(corpus, 256, vocab_size=32)
        nfe = {}
        for mode in ("sjd", "sjd_pv"):
            cfg = VerifyConfig(mode=mode, window_size=16, tau=0.01)
            total = 0
            for run in range(8):
                rng = np.random.default_rng([99, run])
                _, metrics = decode(
                    model, lib if mode == "sjd_pv" else None, cfg, 192, rng
                )
                total += metrics.nfe
            nfe[mode] = total
        assert nfe["sjd_pv"] < nfe["sjd"]


class TestConfigValidation:
    def test_bad_mode(self):
        with pytest.raises(ValueError):
            VerifyConfig(mode="turbo")

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            VerifyConfig(tau=0.0)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            VerifyConfig(window_size=0)

    def test_window_invariant(self):
        with pytest.raises(ValueError):
            JacobiWindow((0,), (CategoricalDistribution([0.0, 1.0]),), 0)
