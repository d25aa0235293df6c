import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sotlab.mixer import (EVALUATION, TRAINING, ConfigurationError, FormatError, MixturePlan,
                          PlanningError, SerializedReference, ToneConfig, Utterance,
                          enumerate_serializations, generate_corpus, plan_mixture, plan_mixtures,
                          plan_violations, render_mixture, render_tokens, serialize_fifo,
                          token_frequencies)
from sotlab.vocab import EOS, SC


def utt(uid, dur, sr=100, tokens=("a",), wave=None):
    n = int(round(dur * sr))
    w = np.ones(n) if wave is None else wave
    return Utterance(uid, "spk", list(tokens), sr, n / sr, w)


class TestCorpus:
    def test_counts_and_lengths(self):
        corpus = generate_corpus(12, 100, (3, 8), seed=7)
        assert len(corpus) == 100
        assert all(3 <= len(u.tokens) <= 8 for u in corpus)
        assert all(len(u.waveform) == u.num_samples for u in corpus)

    def test_degenerate(self):
        (u,) = generate_corpus(1, 1, (1, 1), seed=0)
        assert len(u.tokens) == 1
        assert u.duration == pytest.approx(0.2)

    def test_deterministic(self):
        a = generate_corpus(5, 10, (2, 4), seed=3)
        b = generate_corpus(5, 10, (2, 4), seed=3)
        assert [u.tokens for u in a] == [u.tokens for u in b]
        assert all(np.array_equal(x.waveform, y.waveform) for x, y in zip(a, b))

    def test_tone_spectrum_peak(self):
        wave = render_tokens(["a"], {"a": 500.0}, 16000, ToneConfig(token_duration=0.2))
        assert len(wave) == 3200
        spec = np.abs(np.fft.rfft(wave))
        freqs = np.fft.rfftfreq(len(wave), 1 / 16000)
        assert freqs[np.argmax(spec)] == 500.0

    def test_vocab_beyond_capacity(self):
        with pytest.raises(ConfigurationError, match="distinct mel bins"):
            generate_corpus(1000, 1, (1, 1), seed=0)

    def test_frequencies_distinct_and_increasing(self):
        f = token_frequencies(12)
        assert np.all(np.diff(f) > 0)


class TestPlanning:
    def test_single_source(self):
        pool = [utt("a", 1.0), utt("b", 1.0)]
        plan = plan_mixture(pool, 1, TRAINING, np.random.default_rng(0))
        assert plan.delays == [0.0]

    def test_start_gap_rejected_in_training(self):
        assert "start-gap" in plan_violations([0.0, 0.4], [1.0, 1.0], TRAINING)
        assert plan_violations([0.0, 0.5], [1.0, 1.0], TRAINING) == []

    def test_simultaneous_start_allowed_in_evaluation(self):
        assert plan_violations([0.0, 0.0], [1.0, 1.0], EVALUATION) == []
        assert "start-gap" in plan_violations([0.0, 0.0], [1.0, 1.0], TRAINING)

    def test_overlap_required(self):
        assert "overlap" in plan_violations([0.0, 1.2], [1.0, 1.0], EVALUATION)

    def test_too_short_to_overlap(self):
        pool = [utt("a", 0.3), utt("b", 0.3)]
        with pytest.raises(PlanningError, match="start-gap|overlap"):
            plan_mixture(pool, 2, TRAINING, np.random.default_rng(0))

    def test_distinct_ids(self):
        pool = [utt(f"u{i}", 2.0) for i in range(3)]
        for seed in range(20):
            plan = plan_mixture(pool, 3, TRAINING, np.random.default_rng(seed))
            assert len(set(plan.source_ids)) == 3

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 3), st.sampled_from([TRAINING, EVALUATION]), st.integers(0, 10_000))
    def test_plans_satisfy_constraints(self, S, mode, seed):
        rng = np.random.default_rng(seed)
        pool = [utt(f"u{i}", float(d)) for i, d in enumerate(rng.uniform(1.5, 3.0, size=6))]
        plan = plan_mixture(pool, S, mode, rng)
        durs = {u.id: u.duration for u in pool}
        assert min(plan.delays) == 0.0
        assert plan_violations(plan.delays, [durs[i] for i in plan.source_ids], mode) == []

    def test_one_plan_per_anchor(self):
        corpus = generate_corpus(4, 30, (4, 6), seed=1)
        plans = plan_mixtures(corpus, [1, 2], TRAINING, seed=5)
        assert [p.source_ids[0] for p in plans] == [u.id for u in corpus]
        assert plans == plan_mixtures(corpus, [1, 2], TRAINING, seed=5)


class TestRender:
    def test_identity(self):
        u = generate_corpus(3, 1, (2, 2), seed=0)[0]
        mix = render_mixture(MixturePlan([u.id], [0.0]), [u])
        assert np.array_equal(mix.waveform, u.waveform)
        assert mix.serialized_reference.tokens == u.tokens + [EOS]

    def test_cancellation(self):
        x = np.sin(np.arange(200) * 0.3)
        a, b = utt("a", 2.0, wave=x), utt("b", 2.0, wave=-x)
        mix = render_mixture(MixturePlan(["a", "b"], [0.0, 0.0], EVALUATION), [a, b])
        assert np.all(mix.waveform == 0.0)

    def test_length_and_sum(self):
        rng = np.random.default_rng(0)
        a = utt("a", 1.0, wave=rng.normal(size=100))
        b = utt("b", 0.8, wave=rng.normal(size=80))
        mix = render_mixture(MixturePlan(["a", "b"], [0.5, 0.0]), [a, b])
        assert len(mix.waveform) == max(50 + 100, 80)
        expect = np.zeros(150)
        expect[50:] += a.waveform
        expect[:80] += b.waveform
        np.testing.assert_array_equal(mix.waveform, expect)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x, y, z = rng.normal(size=(3, 120))
        plan = MixturePlan(["p", "q"], [0.0, 0.3])
        def run(w1, w2):
            return render_mixture(plan, [utt("p", 1.2, wave=w1), utt("q", 1.2, wave=w2)]).waveform
        np.testing.assert_allclose(run(x + y, z), run(x, z) + run(y, 0 * z), atol=1e-12)

    def test_equal_power_sir_near_zero(self):
        corpus = generate_corpus(12, 2, (6, 6), seed=3)
        a, b = corpus
        plan = MixturePlan([a.id, b.id], [0.0, 0.5])
        render_mixture(plan, corpus)
        off = int(0.5 * a.sample_rate)
        n = len(a.waveform) - off
        sir = 10 * np.log10(np.sum(a.waveform[off:] ** 2) / np.sum(b.waveform[:n] ** 2))
        assert abs(sir) < 0.5

    def test_no_gain_applied(self):
        a = utt("a", 1.0, wave=np.full(100, 0.9))
        b = utt("b", 1.0, wave=np.full(100, 0.9))
        mix = render_mixture(MixturePlan(["a", "b"], [0.0, 0.0], EVALUATION), [a, b])
        assert mix.waveform.max() == pytest.approx(1.8)

    def test_rate_mismatch(self):
        a = utt("a", 1.0, sr=100)
        b = utt("b", 1.0, sr=200)
        with pytest.raises(FormatError):
            render_mixture(MixturePlan(["a", "b"], [0.0, 0.5]), [a, b])


class TestSerialization:
    def test_fifo_order(self):
        ref = serialize_fifo([(["a", "b"], 0.7), (["c"], 0.3)], np.random.default_rng(0))
        assert ref.tokens == ["c", SC, "a", "b", EOS]

    def test_single(self):
        ref = serialize_fifo([(["a"], 0.0)], np.random.default_rng(0))
        assert ref.tokens == ["a", EOS]

    def test_length(self):
        ref = serialize_fifo([(["a", "b", "c"], 0.0), (["d", "e"], 0.6)], np.random.default_rng(0))
        assert len(ref) == 7

    def test_ties_are_random_but_seeded(self):
        src = [(["a"], 0.0), (["b"], 0.0)]
        firsts = {serialize_fifo(src, np.random.default_rng(s)).tokens[0] for s in range(40)}
        assert firsts == {"a", "b"}
        assert (serialize_fifo(src, np.random.default_rng(9)).tokens
                == serialize_fifo(src, np.random.default_rng(9)).tokens)

    def test_one_draw_per_tied_group(self):
        rng = np.random.default_rng(4)
        serialize_fifo([(["a"], 0.0), (["b"], 0.0), (["c"], 1.0), (["d"], 1.0)], rng)
        ref = np.random.default_rng(4)
        ref.integers(2), ref.integers(2)
        assert rng.integers(1 << 30) == ref.integers(1 << 30)

    def test_enumerate_two(self):
        out = enumerate_serializations([["a"], ["b"]])
        assert [r.tokens for r in out] == [["a", SC, "b", EOS], ["b", SC, "a", EOS]]

    def test_enumerate_counts(self):
        assert len(enumerate_serializations([["a"]])) == 1
        out = enumerate_serializations([["a"], ["b", "c"], ["d"]])
        assert len(out) == 6
        assert {len(r) for r in out} == {7}

    def test_enumerate_cap(self):
        with pytest.raises(ValueError, match="cap"):
            enumerate_serializations([["a"]] * 7)

    def test_reference_invariants(self):
        with pytest.raises(ValueError):
            SerializedReference(["a", EOS, "b", EOS])
        with pytest.raises(ValueError):
            SerializedReference(["a"])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.lists(st.sampled_from("abcd"), min_size=1, max_size=4),
                              st.sampled_from([0.0, 0.5, 1.0, 1.5, 2.0])), min_size=1, max_size=4),
           st.integers(0, 1000))
    def test_round_trip(self, sources, seed):
        ref = serialize_fifo(sources, np.random.default_rng(seed))
        blocks = ref.blocks()
        assert ref.tokens.count(SC) == len(sources) - 1
        assert len(ref) == sum(len(t) + 1 for t, _ in sources)
        starts = sorted(t for _, t in sources)
        # each block is a source whose start time matches its sorted position
        remaining = list(sources)
        for blk, start in zip(blocks, starts):
            match = next(s for s in remaining if s[0] == blk and s[1] == start)
            remaining.remove(match)
        assert not remaining
        assert ref.tokens in [r.tokens for r in enumerate_serializations([t for t, _ in sources])]


def test_serialization_is_a_permutation_of_blocks():
    srcs = [["a"], ["b", "b"], ["c"]]
    for r, perm in zip(enumerate_serializations(srcs), itertools.permutations(range(3))):
        assert r.blocks() == [srcs[i] for i in perm]
