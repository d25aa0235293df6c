"""Tone-word corpus synthesis, overlapped-mixture planning/rendering, and
reference serialization with speaker-change tokens."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frontend import FrontendConfig, mel_centers_hz
from .vocab import EOS, SC, SPECIALS, token_names

TRAINING = "training"
EVALUATION = "evaluation"
MODES = (TRAINING, EVALUATION)

MIN_START_GAP = 0.5
FACTORIAL_CAP = 6


class ConfigurationError(ValueError):
    pass


class PlanningError(RuntimeError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    speaker: str
    tokens: list[str]
    sample_rate: int
    duration: float
    waveform: np.ndarray | None = field(default=None, repr=False)
    audio_path: str | None = None

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"utterance {self.id} has no tokens")
        bad = [t for t in self.tokens if t in SPECIALS]
        if bad:
            raise ValueError(f"utterance {self.id} contains reserved symbol {bad[0]}")
        if self.waveform is not None:
            n = len(self.waveform)
            if not math.isclose(n / self.sample_rate, self.duration, abs_tol=0.5 / self.sample_rate):
                raise ValueError(f"utterance {self.id}: duration {self.duration} != {n}/{self.sample_rate}")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def load(self) -> np.ndarray:
        if self.waveform is None:
            if self.audio_path is None:
                raise FormatError(f"utterance {self.id} has neither waveform nor audio path")
            from .io import read_wav

            wav, sr = read_wav(self.audio_path)
            if sr != self.sample_rate:
                raise FormatError(f"{self.audio_path}: rate {sr} != manifest rate {self.sample_rate}")
            self.waveform = wav
        return self.waveform


@dataclass
class MixturePlan:
    source_ids: list[str]
    delays: list[float]
    mode: str = TRAINING


@dataclass
class SerializedReference:
    tokens: list[str]

    def __post_init__(self):
        if not self.tokens or self.tokens[-1] != EOS or self.tokens.count(EOS) != 1:
            raise ValueError("serialized reference must contain exactly one <eos>, in final position")

    @property
    def boundaries(self) -> list[int]:
        return [i for i, t in enumerate(self.tokens) if t == SC]

    @property
    def num_speakers(self) -> int:
        return len(self.boundaries) + 1

    def __len__(self) -> int:
        return len(self.tokens)

    def blocks(self) -> list[list[str]]:
        out, cur = [], []
        for t in self.tokens[:-1]:
            if t == SC:
                out.append(cur)
                cur = []
            else:
                cur.append(t)
        out.append(cur)
        return out

    def __str__(self) -> str:
        return " ".join(self.tokens)


@dataclass
class MixtureSample:
    id: str
    waveform: np.ndarray = field(repr=False)
    sample_rate: int
    sources: list[tuple[Utterance, float]]
    serialized_reference: SerializedReference
    mode: str = TRAINING

    @property
    def num_speakers(self) -> int:
        return len(self.sources)


# -- corpus -------------------------------------------------------------------

@dataclass(frozen=True)
class ToneConfig:
    token_duration: float = 0.2
    amplitude: float = 0.25
    ramp: float = 0.01  # raised-cosine on/off ramp per token
    first_bin: int | None = None  # None -> lowest well-resolved mel band
    bin_stride: int = 2


def tone_bins(frontend: FrontendConfig, tones: ToneConfig = ToneConfig()) -> list[int]:
    """Mel bands available for token tones.

    A band qualifies once its spacing to the previous band is at least two
    DFT bins, so a Hann-windowed tone at its center peaks in that band alone.
    """
    centers = mel_centers_hz(frontend)
    resolution = frontend.sample_rate / frontend.n_fft
    first = tones.first_bin
    if first is None:
        spacing = np.diff(centers)
        first = int(np.argmax(spacing >= 2 * resolution)) + 1
    # leave the top band as guard
    return list(range(first, frontend.n_mels - 1, tones.bin_stride))


def token_frequencies(vocab_size: int, frontend: FrontendConfig = FrontendConfig(),
                      tones: ToneConfig = ToneConfig()) -> np.ndarray:
    bins = tone_bins(frontend, tones)
    if vocab_size > len(bins):
        raise ConfigurationError(
            f"vocab size {vocab_size} exceeds the {len(bins)} distinct mel bins available "
            f"for tones (n_mels={frontend.n_mels}, stride={tones.bin_stride})")
    if vocab_size < 1:
        raise ConfigurationError("vocab size must be >= 1")
    return mel_centers_hz(frontend)[bins[:vocab_size]]


def render_tokens(tokens: Sequence[str], freqs: dict[str, float], sample_rate: int,
                  tones: ToneConfig = ToneConfig()) -> np.ndarray:
    n = int(round(tones.token_duration * sample_rate))
    t = np.arange(n) / sample_rate
    env = np.ones(n)
    r = min(int(round(tones.ramp * sample_rate)), n // 2)
    if r:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = ramp
        env[-r:] = ramp[::-1]
    segs = [tones.amplitude * env * np.sin(2 * np.pi * freqs[tok] * t) for tok in tokens]
    return np.concatenate(segs)


def generate_corpus(vocab_size: int, num_utterances: int, length_range: tuple[int, int], seed: int,
                    sample_rate: int = 16000, num_speakers: int = 20,
                    tones: ToneConfig = ToneConfig(), frontend: FrontendConfig | None = None) -> list[Utterance]:
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ConfigurationError(f"bad length range {length_range}")
    frontend = frontend or FrontendConfig(sample_rate=sample_rate)
    words = token_names(vocab_size)
    freqs = dict(zip(words, token_frequencies(vocab_size, frontend, tones)))
    rng = np.random.default_rng(seed)
    corpus = []
    width = len(str(max(num_utterances - 1, 1)))
    for i in range(num_utterances):
        length = int(rng.integers(lo, hi + 1))
        toks = [words[j] for j in rng.integers(0, vocab_size, size=length)]
        spk = f"spk{int(rng.integers(num_speakers)):02d}"
        wav = render_tokens(toks, freqs, sample_rate, tones)
        corpus.append(Utterance(f"utt{i:0{width}d}", spk, toks, sample_rate, len(wav) / sample_rate, wav))
    return corpus


# -- planning -----------------------------------------------------------------

def plan_violations(delays: Sequence[float], durations: Sequence[float], mode: str) -> list[str]:
    """Names of the mixing constraints a set of delays breaks (empty list if none)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    if len(delays) < 2:
        return out
    if not math.isclose(min(delays), 0.0, abs_tol=1e-12):
        out.append("min-delay-zero")
    if mode == TRAINING:
        gaps = [abs(a - b) for a, b in itertools.combinations(delays, 2)]
        if min(gaps) < MIN_START_GAP - 1e-9:
            out.append("start-gap")
    spans = [(d, d + dur) for d, dur in zip(delays, durations)]
    for i, (s, e) in enumerate(spans):
        if not any(max(s, s2) < min(e, e2) for j, (s2, e2) in enumerate(spans) if j != i):
            out.append("overlap")
            break
    return out


def _quantize(x: float, step: float = 0.01) -> float:
    return round(round(x / step) * step, 6)


def plan_mixture(pool: Sequence[Utterance], S: int, mode: str, rng: np.random.Generator,
                 anchor: Utterance | None = None, max_retries: int = 1000) -> MixturePlan:
    """Pick S distinct utterances (anchor first if given) and sample valid delays."""
    if S < 1:
        raise ValueError("S must be >= 1")
    if len(pool) < S:
        raise ValueError(f"pool of {len(pool)} utterances cannot supply {S} sources")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if anchor is not None:
        pos = next((k for k, u in enumerate(pool) if u is anchor or u.id == anchor.id), None)
        if pos is None:
            raise ValueError(f"anchor {anchor.id} is not in the pool")
        # draw from the pool with the anchor's slot removed, without copying the pool
        draw = rng.choice(len(pool) - 1, size=S - 1, replace=False)
        picks = [anchor] + [pool[int(i) + (i >= pos)] for i in draw]
    else:
        picks = [pool[i] for i in rng.choice(len(pool), size=S, replace=False)]
    ids = [u.id for u in picks]
    if S == 1:
        return MixturePlan(ids, [0.0], mode)
    durations = [u.duration for u in picks]
    upper = max(0.0, max(durations) - 0.25)
    last = []
    for _ in range(max_retries):
        raw = rng.uniform(0.0, upper, size=S)
        delays = [_quantize(d - raw.min()) for d in raw]
        last = plan_violations(delays, durations, mode)
        if not last:
            return MixturePlan(ids, delays, mode)
    raise PlanningError(f"no valid delays for {ids} after {max_retries} draws; violated: {', '.join(last)}")


# -- rendering ----------------------------------------------------------------

def render_mixture(plan: MixturePlan, pool, rng: np.random.Generator | None = None,
                   mixture_id: str = "mix", volume_perturbation: bool = False) -> MixtureSample:
    """Sum delayed sources at their original level.

    ``rng`` drives tie-breaking in the FIFO serialization and, when enabled,
    the single volume-perturbation gain.
    """
    lookup = pool if isinstance(pool, dict) else {u.id: u for u in pool}
    try:
        utts = [lookup[i] for i in plan.source_ids]
    except KeyError as exc:
        raise KeyError(f"plan references unknown utterance {exc.args[0]}") from None
    rates = {u.sample_rate for u in utts}
    if len(rates) != 1:
        raise FormatError(f"sources have mixed sample rates {sorted(rates)}")
    sr = rates.pop()
    rng = rng if rng is not None else np.random.default_rng(0)
    offsets = [int(round(d * sr)) for d in plan.delays]
    waves = [u.load() for u in utts]
    out = np.zeros(max(o + len(w) for o, w in zip(offsets, waves)))
    for o, w in zip(offsets, waves):
        out[o:o + len(w)] += w
    ref = serialize_fifo([(u.tokens, d) for u, d in zip(utts, plan.delays)], rng)
    if volume_perturbation:
        out = out * rng.uniform(0.8, 1.25)
    return MixtureSample(mixture_id, out, sr, list(zip(utts, plan.delays)), ref, plan.mode)


# -- serialization ------------------------------------------------------------

def _join(blocks: Sequence[Sequence[str]]) -> SerializedReference:
    toks: list[str] = []
    for i, b in enumerate(blocks):
        if i:
            toks.append(SC)
        toks.extend(b)
    toks.append(EOS)
    return SerializedReference(toks)


def fifo_order(start_times: Sequence[float], rng: np.random.Generator) -> list[int]:
    """Source indices by ascending start time; each group of exact ties is shuffled with one rng draw."""
    order: list[int] = []
    for _, grp in itertools.groupby(sorted(range(len(start_times)), key=lambda i: start_times[i]),
                                    key=lambda i: start_times[i]):
        grp = list(grp)
        if len(grp) > 1:
            perms = list(itertools.permutations(grp))
            grp = list(perms[int(rng.integers(len(perms)))])
        order.extend(grp)
    return order


def serialize_fifo(sources: Sequence[tuple[Sequence[str], float]], rng: np.random.Generator) -> SerializedReference:
    if not sources:
        raise ValueError("nothing to serialize")
    order = fifo_order([t for _, t in sources], rng)
    return _join([sources[i][0] for i in order])


def enumerate_serializations(sources: Sequence[Sequence[str]], cap: int = FACTORIAL_CAP) -> list[SerializedReference]:
    """One serialization per speaker permutation, in lexicographic permutation order."""
    if len(sources) > cap:
        raise ValueError(f"{len(sources)} speakers exceeds the factorial cap of {cap}")
    return [_join([sources[i] for i in p]) for p in itertools.permutations(range(len(sources)))]


def mixture_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def plan_mixtures(corpus: Sequence[Utterance], speakers: Sequence[int], mode: str, seed: int,
                  max_redraws: int = 20) -> list[MixturePlan]:
    """One plan per anchor utterance; S drawn uniformly from ``speakers`` for each.

    When the drawn partners cannot satisfy the constraints, new partners are
    drawn (up to ``max_redraws`` times) before giving up.
    """
    plans = []
    for i, anchor in enumerate(corpus):
        rng = mixture_rng(seed, i)
        S = int(speakers[int(rng.integers(len(speakers)))])
        err = None
        for _ in range(max_redraws):
            try:
                plans.append(plan_mixture(corpus, S, mode, rng, anchor=anchor))
                break
            except PlanningError as exc:
                err = exc
        else:
            raise PlanningError(f"anchor {anchor.id}: {err}")
    return plans
