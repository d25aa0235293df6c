"""Attention-based encoder-decoder with single-branch, multi-branch (PIT) and
separation-after-attention heads."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
from torch import nn
from torch.nn import functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .vocab import Vocabulary


class ConfigurationError(ValueError):
    pass


@dataclass
class AedConfig:
    words: tuple[str, ...]
    input_dim: int = 240
    model_dim: int = 64
    encoder_layers: int = 6
    shared_encoder_layers: int = 5
    decoder_layers: int = 2
    num_branches: int = 1
    saa: bool = False
    att_dim: int | None = None
    att_conv_filters: int = 10
    att_conv_width: int = 15
    init_range: float = 0.05

    def __post_init__(self):
        self.words = tuple(self.words)
        if self.num_branches < 1:
            raise ConfigurationError("num_branches must be >= 1")
        if self.saa and self.num_branches != 1:
            raise ConfigurationError("separation-after-attention needs a single output branch")
        if self.saa and self.encoder_layers < 2:
            raise ConfigurationError("separation-after-attention drops one encoder layer; need >= 2")
        if not 1 <= self.shared_encoder_layers <= self.encoder_layers:
            raise ConfigurationError("shared_encoder_layers must lie in [1, encoder_layers]")
        if self.num_branches > 1 and self.shared_encoder_layers == self.encoder_layers:
            raise ConfigurationError("multi-branch model needs at least one branch-specific encoder layer")
        if self.att_conv_width < 1 or self.att_conv_width % 2 == 0:
            raise ConfigurationError("att_conv_width must be a positive odd number")

    @property
    def vocab_size(self) -> int:
        return len(self.words) + 2

    @property
    def attention_dim(self) -> int:
        return self.att_dim or self.model_dim

    @property
    def effective_encoder_layers(self) -> int:
        return self.encoder_layers - 1 if self.saa else self.encoder_layers

    def to_dict(self) -> dict:
        d = asdict(self)
        d["words"] = list(self.words)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AedConfig":
        return cls(**d)


class BlstmStack(nn.Module):
    """Bidirectional LSTM layers, each followed by layer normalization."""

    def __init__(self, input_dim: int, hidden: int, layers: int):
        super().__init__()
        self.rnns = nn.ModuleList()
        self.norms = nn.ModuleList()
        for i in range(layers):
            self.rnns.append(nn.LSTM(input_dim if i == 0 else 2 * hidden, hidden,
                                     batch_first=True, bidirectional=True))
            self.norms.append(nn.LayerNorm(2 * hidden))

    def forward(self, x: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        T = x.shape[1]
        for rnn, norm in zip(self.rnns, self.norms):
            packed = pack_padded_sequence(x, lengths.cpu(), batch_first=True, enforce_sorted=False)
            y, _ = rnn(packed)
            x, _ = pad_packed_sequence(y, batch_first=True, total_length=T)
            x = norm(x)
        return x


class LocationAttention(nn.Module):
    """Content attention with convolutional features of the previous weights."""

    def __init__(self, enc_dim: int, dec_dim: int, att_dim: int, filters: int, width: int):
        super().__init__()
        self.enc_proj = nn.Linear(enc_dim, att_dim)
        self.dec_proj = nn.Linear(dec_dim, att_dim, bias=False)
        self.loc_conv = nn.Conv1d(1, filters, width, padding=width // 2, bias=False)
        self.loc_proj = nn.Linear(filters, att_dim, bias=False)
        self.gvec = nn.Linear(att_dim, 1, bias=False)

    def scores(self, q, alpha_prev, enc_pre):
        loc = self.loc_conv(alpha_prev.unsqueeze(1)).transpose(1, 2)  # B x T x F
        e = torch.tanh(enc_pre + self.dec_proj(q).unsqueeze(1) + self.loc_proj(loc))
        return self.gvec(e).squeeze(2)

    def forward(self, q, alpha_prev, enc, enc_pre, mask):
        e = self.scores(q, alpha_prev, enc_pre).masked_fill(~mask, float("-inf"))
        alpha = F.softmax(e, dim=1)
        context = torch.bmm(alpha.unsqueeze(1), enc).squeeze(1)
        return context, alpha


@dataclass
class EncoderOutput:
    branches: list[torch.Tensor]  # each B x T' x 2M
    lengths: torch.Tensor
    mask: torch.Tensor  # B x T', True on valid frames

    @property
    def num_branches(self) -> int:
        return len(self.branches)


@dataclass
class DecoderState:
    h: list[torch.Tensor]
    c: list[torch.Tensor]
    context: torch.Tensor
    alpha: torch.Tensor
    enc: torch.Tensor = field(repr=False)
    enc_pre: torch.Tensor = field(repr=False)
    mask: torch.Tensor = field(repr=False)
    saa: tuple[torch.Tensor, torch.Tensor] | None = None

    def select(self, idx: torch.Tensor) -> "DecoderState":
        return DecoderState([t[idx] for t in self.h], [t[idx] for t in self.c], self.context[idx],
                            self.alpha[idx], self.enc[idx], self.enc_pre[idx], self.mask[idx],
                            None if self.saa is None else (self.saa[0][idx], self.saa[1][idx]))


class AedModel(nn.Module):
    def __init__(self, config: AedConfig):
        super().__init__()
        self.config = config
        self.vocab = Vocabulary(config.words)
        M, V = config.model_dim, config.vocab_size
        layers = config.effective_encoder_layers
        if config.num_branches == 1:
            self.shared = BlstmStack(config.input_dim, M, layers)
            self.branch_encoders = nn.ModuleList()
        else:
            shared = config.shared_encoder_layers
            self.shared = BlstmStack(config.input_dim, M, shared)
            self.branch_encoders = nn.ModuleList(
                BlstmStack(2 * M, M, layers - shared) for _ in range(config.num_branches))
        self.attention = LocationAttention(2 * M, M, config.attention_dim,
                                           config.att_conv_filters, config.att_conv_width)
        self.embed = nn.Embedding(V + 1, M)  # +1 for <sos>
        self.decoder = nn.ModuleList(
            nn.LSTMCell(M + 2 * M if i == 0 else M, M) for i in range(config.decoder_layers))
        self.saa = nn.LSTMCell(3 * M, M) if config.saa else None
        self.output = nn.Linear(M if config.saa else 3 * M, V)
        self.sequences_decoded = 0
        self.reset_parameters()

    def reset_parameters(self):
        r = self.config.init_range
        for name, p in self.named_parameters():
            if ".norms." in name:
                nn.init.ones_(p) if name.endswith("weight") else nn.init.zeros_(p)
            else:
                nn.init.uniform_(p, -r, r)
        for mod in self.modules():
            if isinstance(mod, (nn.LSTM, nn.LSTMCell)):
                for name, p in mod.named_parameters():
                    if name.startswith("bias"):
                        n = p.shape[0] // 4
                        with torch.no_grad():
                            p.zero_()
                            if name.startswith("bias_ih"):
                                p[n:2 * n] = 1.0

    @property
    def num_branches(self) -> int:
        return self.config.num_branches

    @property
    def dtype(self) -> torch.dtype:
        return self.output.weight.dtype

    # -- encoder --------------------------------------------------------------

    def encode(self, features, lengths=None) -> EncoderOutput:
        """Encode a padded batch (B x T' x D) or a single (T' x D) sequence."""
        x = torch.as_tensor(features, dtype=self.dtype)
        if x.dim() == 2:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.config.input_dim:
            raise ConfigurationError(f"feature dim {x.shape[-1]} != configured {self.config.input_dim}")
        if x.shape[1] == 0:
            raise ValueError("empty feature sequence")
        B, T = x.shape[:2]
        if lengths is None:
            lengths = torch.full((B,), T, dtype=torch.long)
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        if int(lengths.min()) < 1:
            raise ValueError("empty feature sequence")
        mask = torch.arange(T)[None, :] < lengths[:, None]
        h = self.shared(x, lengths)
        branches = [h] if not len(self.branch_encoders) else [enc(h, lengths) for enc in self.branch_encoders]
        return EncoderOutput(branches, lengths, mask)

    # -- decoder --------------------------------------------------------------

    def initial_state(self, enc: torch.Tensor, mask: torch.Tensor) -> DecoderState:
        B = enc.shape[0]
        M = self.config.model_dim
        zeros = enc.new_zeros(B, M)
        alpha = mask.to(enc.dtype) / mask.sum(1, keepdim=True).to(enc.dtype)
        saa = (zeros, zeros) if self.saa is not None else None
        return DecoderState([zeros] * len(self.decoder), [zeros] * len(self.decoder),
                            enc.new_zeros(B, enc.shape[2]), alpha, enc,
                            self.attention.enc_proj(enc), mask, saa)

    def decoder_step(self, prev_embedding, context_prev, h_prev, c_prev):
        """Recurrent decoder update from the previous token and context; no normalization."""
        x = torch.cat([prev_embedding, context_prev], dim=1)
        hs, cs = [], []
        for cell, h, c in zip(self.decoder, h_prev, c_prev):
            h, c = cell(x, (h, c))
            hs.append(h)
            cs.append(c)
            x = h
        return hs, cs

    def output_logits(self, context, q, saa_state=None):
        x = torch.cat([context, q], dim=1)
        if self.saa is not None:
            saa_state = self.saa(x, saa_state)
            x = saa_state[0]
        return self.output(x), saa_state

    def step(self, state: DecoderState, prev_tokens: torch.Tensor):
        """One decoding step. Returns (log-probs B x V, new state)."""
        hs, cs = self.decoder_step(self.embed(prev_tokens), state.context, state.h, state.c)
        context, alpha = self.attention(hs[-1], state.alpha, state.enc, state.enc_pre, state.mask)
        logits, saa = self.output_logits(context, hs[-1], state.saa)
        new = DecoderState(hs, cs, context, alpha, state.enc, state.enc_pre, state.mask, saa)
        return F.log_softmax(logits, dim=-1), new

    def teacher_forced(self, enc: EncoderOutput, rows: Sequence[tuple[int, int]],
                       targets: Sequence[Sequence[int]]) -> torch.Tensor:
        """Log-probabilities for K target sequences (each ending in <eos>).

        ``rows[k] = (branch, sample)`` picks the encoder output that sequence k
        attends to. Returns a K x N_max x V tensor; positions past a target's
        length are padding.
        """
        K = len(targets)
        N = max(len(t) for t in targets)
        eos = self.vocab.eos
        for t in targets:
            if not t or t[-1] != eos:
                raise ValueError("teacher-forced targets must end with <eos>")
        branch_idx = torch.tensor([r[0] for r in rows])
        sample_idx = torch.tensor([r[1] for r in rows])
        stacked = torch.stack(enc.branches)  # S x B x T x 2M
        state = self.initial_state(stacked[branch_idx, sample_idx], enc.mask[sample_idx])
        inputs = torch.full((K, N), eos, dtype=torch.long)
        inputs[:, 0] = self.vocab.sos
        for k, t in enumerate(targets):
            inputs[k, 1:len(t)] = torch.tensor(t[:-1], dtype=torch.long)
        out = []
        for n in range(N):
            logp, state = self.step(state, inputs[:, n])
            out.append(logp)
        self.sequences_decoded += K
        return torch.stack(out, dim=1)

    def forward_teacher_forced(self, features, reference, branch: int = 0) -> torch.Tensor:
        """Per-position log-distributions (N+1 x V) for one utterance and one reference."""
        ids = self.vocab.encode(list(reference))
        enc = self.encode(features)
        return self.teacher_forced(enc, [(branch, 0)], [ids])[0]


def build_model(config: AedConfig, seed: int = 0) -> AedModel:
    torch.manual_seed(seed)
    return AedModel(config)
