"""Beam search, speaker-change splitting and speaker counting."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .vocab import EOS, SC


class ContractViolation(ValueError):
    pass


@dataclass
class Hypothesis:
    tokens: list[str]
    score: float
    truncated: bool = False
    transcripts: list[list[str]] = field(init=False)
    num_speakers: int = field(init=False)

    def __post_init__(self):
        self.transcripts = split_speakers(self.tokens)
        self.num_speakers = count_speakers(self.tokens)


def _check(tokens):
    for i, t in enumerate(tokens):
        if t == EOS and i != len(tokens) - 1:
            raise ContractViolation(f"<eos> at interior position {i}")


def split_speakers(tokens) -> list[list[str]]:
    _check(tokens)
    body = tokens[:-1] if tokens and tokens[-1] == EOS else tokens
    out: list[list[str]] = [[]]
    for t in body:
        if t == SC:
            out.append([])
        else:
            out[-1].append(t)
    return out


def count_speakers(tokens) -> int:
    _check(tokens)
    return sum(1 for t in tokens if t == SC) + 1


def default_max_len(num_frames: int) -> int:
    return 2 * num_frames + 10


@torch.no_grad()
def beam_search(model, features, beam: int = 4, max_len: int | None = None, branch: int = 0,
                enc=None) -> Hypothesis:
    """Length-unnormalized beam search over one output branch.

    A path finishes when it emits ``<eos>``. Search stops once no live path
    can beat the best finished one (scores only decrease), or at ``max_len``.
    If nothing finished, the best live path is returned flagged truncated.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if enc is None:
        enc = model.encode(features)
    T = int(enc.lengths[0])
    max_len = default_max_len(T) if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    vocab = model.vocab
    eos = vocab.eos
    state = model.initial_state(enc.branches[branch][:1], enc.mask[:1])
    prefixes: list[list[int]] = [[]]
    scores = torch.zeros(1, dtype=torch.float64)
    prev = torch.tensor([vocab.sos])
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        logp, state = model.step(state, prev)
        cand = (scores[:, None] + logp.double()).reshape(-1)
        V = logp.shape[1]
        k = min(beam, cand.numel())
        top = torch.topk(cand, k)
        # stable order: score desc, then flat index asc
        order = sorted(zip(top.values.tolist(), top.indices.tolist()), key=lambda x: (-x[0], x[1]))
        live_idx, live_tok, live_scores, live_prefixes = [], [], [], []
        for sc, flat in order:
            src, tok = divmod(flat, V)
            path = prefixes[src] + [tok]
            if tok == eos:
                finished.append((sc, path))
            else:
                live_idx.append(src)
                live_tok.append(tok)
                live_scores.append(sc)
                live_prefixes.append(path)
        if not live_idx:
            break
        best_done = max((f[0] for f in finished), default=float("-inf"))
        if best_done >= max(live_scores):
            break
        idx = torch.tensor(live_idx)
        state = state.select(idx)
        prev = torch.tensor(live_tok)
        scores = torch.tensor(live_scores, dtype=torch.float64)
        prefixes = live_prefixes
    if finished:
        sc, path = max(finished, key=lambda f: f[0])
        return Hypothesis(vocab.decode(path), sc)
    best = int(torch.argmax(scores))
    return Hypothesis(vocab.decode(prefixes[best]), float(scores[best]), truncated=True)


def greedy_decode(model, features, max_len: int | None = None, branch: int = 0) -> Hypothesis:
    return beam_search(model, features, beam=1, max_len=max_len, branch=branch)


@torch.no_grad()
def recognize(model, features, beam: int = 4, max_len: int | None = None) -> tuple[list[list[str]], float, bool, list[Hypothesis]]:
    """Transcripts for one mixture: split the single branch at ``<sc>``, or
    decode every PIT branch independently with the same beam."""
    enc = model.encode(features)
    if model.num_branches == 1:
        hyp = beam_search(model, features, beam, max_len, enc=enc)
        return hyp.transcripts, hyp.score, hyp.truncated, [hyp]
    hyps = [beam_search(model, features, beam, max_len, branch=b, enc=enc) for b in range(model.num_branches)]
    transcripts = [t for h in hyps for t in h.transcripts]
    return transcripts, sum(h.score for h in hyps), any(h.truncated for h in hyps), hyps
