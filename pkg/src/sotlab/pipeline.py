"""Glue between mixtures, features, training samples and scoring."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .frontend import FrontendConfig, extract, num_frames
from .mixer import MixtureSample, Utterance, plan_mixtures, render_mixture
from .trainer import Sample


def mixture_to_sample(mix: MixtureSample, frontend: FrontendConfig) -> Sample:
    feats = extract(mix.waveform, mix.sample_rate, frontend)
    return Sample(mix.id, feats, num_frames(len(mix.waveform), frontend),
                  list(mix.serialized_reference.tokens), mix.serialized_reference.blocks())


def simulate(corpus: Sequence[Utterance], speakers: Sequence[int], mode: str, seed: int,
             prefix: str = "mix") -> list[MixtureSample]:
    plans = plan_mixtures(corpus, speakers, mode, seed)
    pool = {u.id: u for u in corpus}
    width = len(str(max(len(plans) - 1, 1)))
    out = []
    for i, plan in enumerate(plans):
        # independent stream for rendering so planning draws never shift it
        rng = np.random.default_rng([seed, i, 1])
        out.append(render_mixture(plan, pool, rng, mixture_id=f"{prefix}{i:0{width}d}"))
    return out


def to_samples(mixtures: Sequence[MixtureSample], frontend: FrontendConfig) -> list[Sample]:
    return [mixture_to_sample(m, frontend) for m in mixtures]


def samples_from_manifest(path, frontend: FrontendConfig) -> list[Sample]:
    """Load mixture audio listed in a manifest and compute model features."""
    from .io import read_mixture_manifest, read_wav, references_of

    out = []
    for rec in read_mixture_manifest(path):
        wav, sr = read_wav(rec["audio_path"])
        ref = rec["serialized_reference"].split()
        out.append(Sample(rec["mixture_id"], extract(wav, sr, frontend), num_frames(len(wav), frontend),
                          ref, references_of(rec)))
    return out
