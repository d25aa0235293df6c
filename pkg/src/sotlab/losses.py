"""Training objectives: cross entropy, PIT (brute force and Hungarian),
SOT with minimum-loss speaker order and SOT with first-in-first-out order."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .assignment import ContractViolation, brute_force_assignment, hungarian
from .mixer import FACTORIAL_CAP, SerializedReference, enumerate_serializations
from .vocab import EOS

LOSS_KINDS = ("single", "pit_brute", "pit_hungarian", "sot_minperm", "sot_fifo")


@dataclass
class LossResult:
    value: torch.Tensor  # scalar, nats
    per_token_losses: torch.Tensor
    chosen_permutation: tuple[int, ...] | None = None

    @property
    def item(self) -> float:
        return float(self.value.detach())


def ce_loss(log_probs: torch.Tensor, reference: Sequence[int], eos: int | None = None) -> LossResult:
    """Summed cross entropy of an N x V log-distribution against N reference ids."""
    if log_probs.shape[0] != len(reference):
        raise ContractViolation(f"{log_probs.shape[0]} distributions for a reference of length {len(reference)}")
    if eos is not None and reference[-1] != eos:
        raise ContractViolation("reference must end with <eos>")
    idx = torch.as_tensor(list(reference), dtype=torch.long)
    per_token = -log_probs.gather(1, idx[:, None]).squeeze(1)
    return LossResult(per_token.sum(), per_token)


def _sequence_costs(logp: torch.Tensor, targets: Sequence[Sequence[int]]) -> list[torch.Tensor]:
    return [-logp[k, torch.arange(len(t)), torch.as_tensor(t)] for k, t in enumerate(targets)]


def pit_loss_hungarian(cost) -> tuple[float, list[int]]:
    return hungarian(cost)


# -- model-level losses ---------------------------------------------------------

def _check_refs(model, references):
    S = len(references)
    if S != model.num_branches:
        raise ValueError(f"{S} references for a model with {model.num_branches} output branches")
    if S > FACTORIAL_CAP:
        raise ContractViolation(f"{S} speakers exceeds the factorial cap of {FACTORIAL_CAP}")


def pit_cost_matrix(model, enc, sample: int, references: Sequence[Sequence[str]]):
    """S x S per-token costs; entry [r][b] is branch b teacher-forced on reference r."""
    S = len(references)
    ids = [model.vocab.encode(list(r) + [EOS]) for r in references]
    rows = [(b, sample) for r in range(S) for b in range(S)]
    targets = [ids[r] for r in range(S) for b in range(S)]
    logp = model.teacher_forced(enc, rows, targets)
    costs = _sequence_costs(logp, targets)
    return [[costs[r * S + b] for b in range(S)] for r in range(S)]


def _pit_select(per_token, perm) -> LossResult:
    picked = [per_token[s][perm[s]] for s in range(len(perm))]
    tok = torch.cat(picked)
    return LossResult(tok.sum(), tok, tuple(int(p) for p in perm))


def pit_loss_bruteforce(model, features, references: Sequence[Sequence[str]]) -> LossResult:
    _check_refs(model, references)
    enc = model.encode(features)
    per_token = pit_cost_matrix(model, enc, 0, references)
    totals = np.array([[float(x.sum().detach()) for x in row] for row in per_token])
    _, perm = brute_force_assignment(totals)
    return _pit_select(per_token, perm)


def pit_loss_hungarian_model(model, features, references: Sequence[Sequence[str]]) -> LossResult:
    _check_refs(model, references)
    enc = model.encode(features)
    per_token = pit_cost_matrix(model, enc, 0, references)
    totals = np.array([[float(x.sum().detach()) for x in row] for row in per_token])
    _, assign = hungarian(totals)
    return _pit_select(per_token, assign)


def sot_minperm_loss(model, features, references: Sequence[Sequence[str]]) -> LossResult:
    """Minimum CE over all S! speaker orders of the serialized reference."""
    if len(references) > FACTORIAL_CAP:
        raise ContractViolation(f"{len(references)} speakers exceeds the factorial cap of {FACTORIAL_CAP}")
    enc = model.encode(features)
    return sot_minperm_from_encoding(model, enc, 0, references)


def sot_minperm_from_encoding(model, enc, sample: int, references) -> LossResult:
    candidates = enumerate_serializations([list(r) for r in references])
    targets = [model.vocab.encode(c.tokens) for c in candidates]
    logp = model.teacher_forced(enc, [(0, sample)] * len(targets), targets)
    costs = _sequence_costs(logp, targets)
    totals = [float(c.sum().detach()) for c in costs]
    best = min(range(len(totals)), key=lambda i: (totals[i], i))  # lexicographic tie-break
    perm = list(itertools.permutations(range(len(references))))[best]
    return LossResult(costs[best].sum(), costs[best], perm)


def sot_fifo_loss(model, features, serialized: SerializedReference) -> LossResult:
    """Single teacher-forced pass against the start-time-ordered serialization."""
    ids = model.vocab.encode(serialized.tokens)
    logp = model.forward_teacher_forced(features, serialized.tokens)
    return ce_loss(logp, ids, eos=model.vocab.eos)


def single_loss(model, features, tokens: Sequence[str]) -> LossResult:
    ref = list(tokens) + [EOS]
    logp = model.forward_teacher_forced(features, ref)
    return ce_loss(logp, model.vocab.encode(ref), eos=model.vocab.eos)


# -- batched training objective -------------------------------------------------

def batch_loss(model, enc, kind: str, samples: Sequence[dict]) -> tuple[torch.Tensor, list[float]]:
    """Summed loss over a batch. Each sample dict carries ``fifo`` (serialized
    token list) and ``refs`` (per-speaker token lists in start-time order).
    Returns (differentiable total, per-sample values)."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; choose from {LOSS_KINDS}")
    vocab = model.vocab
    if kind in ("single", "sot_fifo"):
        targets = [vocab.encode(s["fifo"]) for s in samples]
        logp = model.teacher_forced(enc, [(0, b) for b in range(len(samples))], targets)
        costs = [c.sum() for c in _sequence_costs(logp, targets)]
    elif kind == "sot_minperm":
        rows, targets, spans = [], [], []
        for b, s in enumerate(samples):
            cands = enumerate_serializations(s["refs"])
            spans.append((len(targets), len(cands)))
            targets += [vocab.encode(c.tokens) for c in cands]
            rows += [(0, b)] * len(cands)
        logp = model.teacher_forced(enc, rows, targets)
        seq = [c.sum() for c in _sequence_costs(logp, targets)]
        costs = []
        for start, n in spans:
            vals = [float(x.detach()) for x in seq[start:start + n]]
            costs.append(seq[start + min(range(n), key=lambda i: (vals[i], i))])
    else:
        S = model.num_branches
        rows, targets = [], []
        for b, s in enumerate(samples):
            refs = pad_references(s["refs"], S)
            for r in range(S):
                ids = vocab.encode(list(refs[r]) + [EOS])
                for br in range(S):
                    rows.append((br, b))
                    targets.append(ids)
        logp = model.teacher_forced(enc, rows, targets)
        seq = [c.sum() for c in _sequence_costs(logp, targets)]
        costs = []
        for b in range(len(samples)):
            block = seq[b * S * S:(b + 1) * S * S]
            totals = np.array([[float(block[r * S + br].detach()) for br in range(S)] for r in range(S)])
            if kind == "pit_brute":
                _, perm = brute_force_assignment(totals)
            else:
                _, perm = hungarian(totals)
            costs.append(sum(block[r * S + perm[r]] for r in range(S)))
    total = torch.stack(costs).sum()
    return total, [float(c.detach()) for c in costs]


def pad_references(refs: Sequence[Sequence[str]], S: int) -> list[list[str]]:
    """Fill missing speakers with empty transcripts (the branch should emit only <eos>)."""
    if len(refs) > S:
        raise ValueError(f"{len(refs)} speakers exceed the model's {S} output branches")
    return [list(r) for r in refs] + [[] for _ in range(S - len(refs))]
