import json

import numpy as np
import pytest

from sotlab.io import (mixture_record, read_corpus_manifest, read_jsonl, read_mixture_manifest, read_wav,
                       references_of, utterance_record, write_jsonl, write_wav)
from sotlab.mixer import MixturePlan, SerializedReference, Utterance


def test_wav_round_trip_within_quantization(tmp_path):
    x = np.sin(np.linspace(0, 50, 1600)) * 0.5
    write_wav(tmp_path / "a.wav", x, 16000)
    y, sr = read_wav(tmp_path / "a.wav")
    assert sr == 16000 and len(y) == len(x)
    assert np.max(np.abs(x - y)) <= 0.5 / 32767 + 1e-12


def test_wav_clips(tmp_path):
    write_wav(tmp_path / "c.wav", np.array([2.0, -2.0, 0.0]), 8000)
    y, _ = read_wav(tmp_path / "c.wav")
    assert y[0] == pytest.approx(1.0) and y[1] <= -1.0


def test_jsonl_round_trip_and_errors(tmp_path):
    recs = [{"b": 1, "a": [1, 2]}, {"x": "y"}]
    write_jsonl(tmp_path / "r.jsonl", recs)
    assert list(read_jsonl(tmp_path / "r.jsonl")) == recs
    assert (tmp_path / "r.jsonl").read_text().splitlines()[0] == json.dumps(recs[0], sort_keys=True)
    (tmp_path / "bad.jsonl").write_text('{"a": 1}\n{oops\n')
    with pytest.raises(ValueError, match=":2:"):
        list(read_jsonl(tmp_path / "bad.jsonl"))


def test_corpus_manifest_resolves_relative_paths(tmp_path):
    u = Utterance("u1", "spk1", ["t00", "t01"], 16000, 0.4, waveform=np.zeros(6400))
    write_jsonl(tmp_path / "corpus.jsonl", [utterance_record(u, "wav/u1.wav")])
    back = read_corpus_manifest(tmp_path / "corpus.jsonl")[0]
    assert back.tokens == ["t00", "t01"] and back.audio_path == str(tmp_path / "wav/u1.wav")


def test_mixture_record_fields(tmp_path):
    plan = MixturePlan(["u1", "u2"], [0.0, 0.6], "training")
    ref = SerializedReference(["a", "<sc>", "b", "c", "<eos>"])
    rec = mixture_record("m0", plan, "wav/m0.wav", ref, [1.0, 1.2])
    assert set(rec) == {"mixture_id", "source_ids", "delays_sec", "mode", "audio_path",
                        "serialized_reference", "durations_sec"}
    write_jsonl(tmp_path / "m.jsonl", [rec])
    back = read_mixture_manifest(tmp_path / "m.jsonl")[0]
    assert references_of(back) == [["a"], ["b", "c"]]
    assert back["audio_path"] == str(tmp_path / "wav/m0.wav")
