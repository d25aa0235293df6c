import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import tiny_model
from sotlab.assignment import ContractViolation, brute_force_assignment, hungarian
from sotlab.losses import (batch_loss, ce_loss, pad_references, pit_cost_matrix, pit_loss_bruteforce,
                           pit_loss_hungarian, pit_loss_hungarian_model, single_loss, sot_fifo_loss,
                           sot_minperm_loss)
from sotlab.mixer import SerializedReference, enumerate_serializations


def fifo_of(refs):
    return SerializedReference([t for i, r in enumerate(refs)
                                for t in [*r, "<sc>" if i < len(refs) - 1 else "<eos>"]])


class TestCrossEntropy:
    def test_uniform(self):
        V, N = 6, 4
        logp = torch.full((N, V), -math.log(V))
        res = ce_loss(logp, [0, 1, 2, 5], eos=5)
        assert res.item == pytest.approx(N * math.log(V))
        assert res.per_token_losses.shape == (N,)

    def test_picks_reference_entries(self):
        logp = torch.log(torch.tensor([[0.5, 0.25, 0.25], [0.1, 0.1, 0.8]]))
        assert ce_loss(logp, [1, 2]).item == pytest.approx(-math.log(0.25) - math.log(0.8))

    def test_perfect_prediction_is_zero(self):
        logp = torch.log(torch.eye(3)[[0, 2]] + 1e-300).double()
        assert ce_loss(logp, [0, 2]).item == pytest.approx(0.0, abs=1e-12)

    def test_contract(self):
        logp = torch.zeros(2, 3)
        with pytest.raises(ContractViolation):
            ce_loss(logp, [0])
        with pytest.raises(ContractViolation):
            ce_loss(logp, [0, 1], eos=2)


class TestAssignment:
    def test_known_matrix(self):
        cost = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
        assert hungarian(cost) == (5.0, [1, 0, 2])
        assert brute_force_assignment(cost) == (5.0, (1, 0, 2))

    @pytest.mark.parametrize("S", [1, 2, 3, 4, 5])
    def test_matches_brute_force(self, S):
        rng = np.random.default_rng(S)
        for _ in range(200):
            c = rng.random((S, S)) * 10
            h, assign = hungarian(c)
            b, _ = brute_force_assignment(c)
            assert abs(h - b) <= 1e-9
            assert sorted(assign) == list(range(S))
            assert abs(sum(c[r, assign[r]] for r in range(S)) - h) <= 1e-9

    def test_integer_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            c = rng.integers(0, 3, (4, 4))
            assert hungarian(c)[0] == brute_force_assignment(c)[0]

    def test_brute_force_tie_break_is_lexicographic(self):
        assert brute_force_assignment(np.ones((3, 3)))[1] == (0, 1, 2)

    @pytest.mark.parametrize("bad", [np.ones((2, 3)), [[0, float("nan")], [1, 1]], [[0, float("inf")], [1, 1]]])
    def test_rejects(self, bad):
        with pytest.raises(ContractViolation):
            hungarian(bad)

    def test_wrapper(self):
        assert pit_loss_hungarian([[1, 0], [0, 1]]) == (0.0, [1, 0])


def mixture(rng, S, words=("a", "b", "c", "d")):
    refs = [[str(w) for w in rng.choice(words, size=int(rng.integers(1, 4)))] for _ in range(S)]
    return rng.standard_normal((int(rng.integers(2, 6)), 6)), refs


class TestPit:
    def test_equals_minimum_over_permutations(self, rng):
        m = tiny_model(num_branches=3, encoder_layers=2, shared_encoder_layers=1)
        feats, refs = mixture(rng, 3)
        cost = pit_cost_matrix(m, m.encode(feats), 0, refs)
        totals = np.array([[float(c.detach().sum()) for c in row] for row in cost])
        best = min(sum(totals[r, p[r]] for r in range(3)) for p in itertools.permutations(range(3)))
        brute = pit_loss_bruteforce(m, feats, refs)
        hung = pit_loss_hungarian_model(m, feats, refs)
        assert brute.item == pytest.approx(best, abs=1e-9)
        assert hung.item == pytest.approx(best, abs=1e-9)
        assert brute.chosen_permutation == hung.chosen_permutation

    def test_cost_matrix_entry_is_branch_on_reference(self, rng):
        m = tiny_model(num_branches=2)
        feats, refs = mixture(rng, 2)
        cost = pit_cost_matrix(m, m.encode(feats), 0, refs)
        logp = m.forward_teacher_forced(feats, refs[0] + ["<eos>"], branch=1)
        ids = m.vocab.encode(refs[0] + ["<eos>"])
        torch.testing.assert_close(cost[0][1], -logp[torch.arange(len(ids)), ids])

    def test_gradient_only_through_winning_pairs(self, rng):
        m = tiny_model(num_branches=2)
        feats, refs = mixture(rng, 2)
        res = pit_loss_hungarian_model(m, feats, refs)
        res.value.backward()
        # reference: sum only the selected cost-matrix entries on an identical model
        m2 = tiny_model(num_branches=2)
        cost = pit_cost_matrix(m2, m2.encode(feats), 0, refs)
        total = sum(cost[r][b].sum() for r, b in enumerate(res.chosen_permutation))
        total.backward()
        for (n, p), (_, q) in zip(m.named_parameters(), m2.named_parameters()):
            torch.testing.assert_close(p.grad, q.grad, msg=n)

    def test_teacher_forced_pass_count(self, rng):
        for S in (2, 3):
            m = tiny_model(num_branches=S)
            feats, refs = mixture(rng, S)
            m.sequences_decoded = 0
            pit_loss_hungarian_model(m, feats, refs)
            assert m.sequences_decoded == S * S

    def test_wrong_speaker_count(self, rng):
        m = tiny_model(num_branches=2)
        feats, refs = mixture(rng, 3)
        with pytest.raises(ValueError):
            pit_loss_bruteforce(m, feats, refs)

    def test_padding_references(self):
        assert pad_references([["a"]], 3) == [["a"], [], []]
        with pytest.raises(ValueError):
            pad_references([["a"], ["b"]], 1)


class TestSot:
    @pytest.mark.parametrize("S", [2, 3])
    def test_minperm_bounded_by_fifo(self, rng, S):
        for seed in range(5):
            m = tiny_model(seed=seed)
            feats, refs = mixture(rng, S)
            mp = sot_minperm_loss(m, feats, refs)
            ff = sot_fifo_loss(m, feats, fifo_of(refs))
            assert mp.item <= ff.item + 1e-12
            every = [sot_fifo_loss(m, feats, c).item for c in enumerate_serializations(refs)]
            assert mp.item == pytest.approx(min(every), abs=1e-12)
            if min(range(len(every)), key=lambda i: (every[i], i)) == 0:
                assert mp.item == pytest.approx(ff.item, abs=1e-12)

    def test_single_speaker_reduces_to_fifo(self, rng):
        m = tiny_model()
        feats, refs = mixture(rng, 1)
        assert sot_minperm_loss(m, feats, refs).item == sot_fifo_loss(m, feats, fifo_of(refs)).item
        assert single_loss(m, feats, refs[0]).item == pytest.approx(sot_fifo_loss(m, feats, fifo_of(refs)).item)

    @pytest.mark.parametrize("S,expected", [(1, 1), (2, 2), (3, 6)])
    def test_pass_counts(self, rng, S, expected):
        m = tiny_model()
        feats, refs = mixture(rng, S)
        m.sequences_decoded = 0
        sot_minperm_loss(m, feats, refs)
        assert m.sequences_decoded == expected
        m.sequences_decoded = 0
        sot_fifo_loss(m, feats, fifo_of(refs))
        assert m.sequences_decoded == 1

    def test_factorial_cap(self, rng):
        m = tiny_model()
        with pytest.raises(ContractViolation):
            sot_minperm_loss(m, rng.standard_normal((3, 6)), [["a"]] * 7)


class TestBatchLoss:
    @pytest.mark.parametrize("kind", ["sot_fifo", "sot_minperm", "pit_brute", "pit_hungarian"])
    def test_matches_per_sample_functions(self, rng, kind):
        branches = 2 if kind.startswith("pit") else 1
        m = tiny_model(num_branches=branches)
        samples, feats = [], []
        for _ in range(3):
            f, refs = mixture(rng, 2)
            feats.append(f)
            samples.append({"fifo": fifo_of(refs).tokens, "refs": refs})
        T = max(len(f) for f in feats)
        x = torch.zeros(3, T, 6, dtype=torch.float64)
        for b, f in enumerate(feats):
            x[b, :len(f)] = torch.from_numpy(f)
        total, per = batch_loss(m, m.encode(x, [len(f) for f in feats]), kind, samples)
        single = {"sot_fifo": lambda f, s: sot_fifo_loss(m, f, SerializedReference(s["fifo"])),
                  "sot_minperm": lambda f, s: sot_minperm_loss(m, f, s["refs"]),
                  "pit_brute": lambda f, s: pit_loss_bruteforce(m, f, s["refs"]),
                  "pit_hungarian": lambda f, s: pit_loss_hungarian_model(m, f, s["refs"])}[kind]
        expect = [single(f, s).item for f, s in zip(feats, samples)]
        np.testing.assert_allclose(per, expect, rtol=1e-9)
        assert float(total.detach()) == pytest.approx(sum(expect))

    def test_unknown_kind(self, rng):
        m = tiny_model()
        with pytest.raises(ValueError):
            batch_loss(m, m.encode(rng.standard_normal((3, 6))), "ctc", [])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_hungarian_property(S, seed):
    c = np.random.default_rng(seed).normal(size=(S, S))
    assert abs(hungarian(c)[0] - brute_force_assignment(c)[0]) <= 1e-9
