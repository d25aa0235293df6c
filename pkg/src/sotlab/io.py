"""On-disk formats: WAV audio, JSON-lines manifests, hypothesis dumps."""

from __future__ import annotations

import json
import wave
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .mixer import MixturePlan, SerializedReference, Utterance


def write_wav(path, waveform: np.ndarray, sample_rate: int) -> None:
    pcm = np.clip(np.round(np.asarray(waveform) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        sr = fh.getframerate()
        data = fh.readframes(fh.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0, sr


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None


def _resolve(base: Path, p: str) -> str:
    q = Path(p)
    return str(q if q.is_absolute() else base / q)


def utterance_record(u: Utterance, audio_path: str) -> dict:
    return {"id": u.id, "speaker": u.speaker, "tokens": " ".join(u.tokens),
            "audio_path": audio_path, "duration_sec": round(u.duration, 6), "sample_rate": u.sample_rate}


def read_corpus_manifest(path, sample_rate: int = 16000) -> list[Utterance]:
    base = Path(path).parent
    return [Utterance(r["id"], r["speaker"], r["tokens"].split(), int(r.get("sample_rate", sample_rate)),
                      float(r["duration_sec"]), audio_path=_resolve(base, r["audio_path"]))
            for r in read_jsonl(path)]


def mixture_record(mixture_id: str, plan: MixturePlan, audio_path: str, ref: SerializedReference,
                   durations: list[float]) -> dict:
    return {"mixture_id": mixture_id, "source_ids": plan.source_ids, "delays_sec": plan.delays,
            "mode": plan.mode, "audio_path": audio_path, "serialized_reference": str(ref),
            "durations_sec": [round(d, 6) for d in durations]}


def read_mixture_manifest(path) -> list[dict]:
    base = Path(path).parent
    out = []
    for r in read_jsonl(path):
        r = dict(r)
        r["audio_path"] = _resolve(base, r["audio_path"])
        out.append(r)
    return out


def references_of(record: dict) -> list[list[str]]:
    """Per-speaker token lists from a mixture record's serialized reference."""
    return SerializedReference(record["serialized_reference"].split()).blocks()
