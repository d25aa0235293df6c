"""Command-line entry points: synth, mix, train, decode, score, gradcheck."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

log = logging.getLogger("sotlab")


class CommandError(RuntimeError):
    pass


def _prepare_out_dir(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise CommandError(f"output directory {out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(jobs) as pool:
        return list(pool.map(fn, items))


# -- synth ------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .io import utterance_record, write_jsonl, write_wav
    from .mixer import generate_corpus

    corpus = generate_corpus(args.vocab, args.count, (args.min_len, args.max_len), args.seed,
                             sample_rate=args.sample_rate)
    out = _prepare_out_dir(args.out_dir, args.force)
    (out / "wav").mkdir(exist_ok=True)
    records = []
    for u in corpus:
        rel = f"wav/{u.id}.wav"
        write_wav(out / rel, u.waveform, u.sample_rate)
        records.append(utterance_record(u, rel))
    write_jsonl(out / "corpus.jsonl", records)
    log.info("wrote %d utterances to %s", len(records), out / "corpus.jsonl")
    return 0


# -- mix --------------------------------------------------------------------------

def _parse_speakers(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise CommandError(f"bad --speakers value {text!r}; expected e.g. '1,2,3'") from None
    if not vals or min(vals) < 1:
        raise CommandError(f"bad --speakers value {text!r}")
    return vals


def cmd_mix(args) -> int:
    from .io import mixture_record, read_corpus_manifest, write_jsonl, write_wav
    from .mixer import EVALUATION, TRAINING, plan_mixtures, render_mixture

    mode = {"training": TRAINING, "train": TRAINING, "evaluation": EVALUATION, "eval": EVALUATION}[args.mode]
    corpus = read_corpus_manifest(args.manifest)
    plans = plan_mixtures(corpus, _parse_speakers(args.speakers), mode, args.seed)
    pool = {u.id: u for u in corpus}
    out = _prepare_out_dir(args.out_dir, args.force)
    (out / "wav").mkdir(exist_ok=True)
    width = len(str(max(len(plans) - 1, 1)))

    def work(i):
        plan = plans[i]
        mid = f"mix{i:0{width}d}"
        rng = np.random.default_rng([args.seed, i, 1])
        mix = render_mixture(plan, pool, rng, mixture_id=mid, volume_perturbation=args.volume_perturbation)
        rel = f"wav/{mid}.wav"
        write_wav(out / rel, mix.waveform, mix.sample_rate)
        return mixture_record(mid, plan, rel, mix.serialized_reference, [pool[s].duration for s in plan.source_ids])

    records = _map(work, range(len(plans)), args.jobs)
    write_jsonl(out / "mixtures.jsonl", records)
    log.info("wrote %d mixtures to %s", len(records), out / "mixtures.jsonl")
    return 0


# -- train ------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .aed import build_model
    from .config import load_config
    from .pipeline import samples_from_manifest
    from .trainer import load_checkpoint, train

    cfg = load_config(args.config, args.set or ())
    log.info("resolved config (hash %s):\n%s", cfg.hash(), cfg.dumps())
    if not cfg.data.train_manifest:
        raise CommandError("data.train_manifest is not set")
    model_cfg = cfg.aed_config()
    model = build_model(model_cfg, seed=cfg.seed)
    train_set = samples_from_manifest(cfg.data.train_manifest, cfg.frontend)
    valid_set = samples_from_manifest(cfg.data.valid_manifest, cfg.frontend) if cfg.data.valid_manifest else []
    out = Path(cfg.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.dumps())
    resume = load_checkpoint(args.resume) if args.resume else None
    with open(out / "train.log", "a" if resume else "w", encoding="utf-8") as fh:
        def on_log(entry):
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
        train(model, cfg.train, train_set, valid_set, out_dir=out, resume=resume, on_log=on_log,
              meta={"frontend": dataclasses.asdict(cfg.frontend), "run_config_hash": cfg.hash()})
    log.info("checkpoints in %s", out)
    return 0


# -- decode -----------------------------------------------------------------------

def cmd_decode(args) -> int:
    from .decoding import recognize
    from .frontend import FrontendConfig, extract
    from .io import read_mixture_manifest, read_wav, write_jsonl
    from .trainer import load_checkpoint, model_from_checkpoint

    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    model.eval()
    frontend = FrontendConfig(**ckpt.meta["frontend"]) if "frontend" in ckpt.meta else FrontendConfig()
    if args.frontend_config:
        from .config import load_config

        frontend = load_config(args.frontend_config).frontend
    records = read_mixture_manifest(args.manifest)

    def work(rec):
        wav, sr = read_wav(rec["audio_path"])
        transcripts, score, truncated, _ = recognize(model, extract(wav, sr, frontend), args.beam, args.max_len)
        n = len(transcripts) if model.num_branches == 1 else sum(1 for t in transcripts if t)
        return {"mixture_id": rec["mixture_id"], "num_speakers": max(n, 1),
                "transcripts": [" ".join(t) for t in transcripts], "score": round(score, 6),
                "truncated": truncated}

    write_jsonl(args.out, _map(work, records, args.jobs))
    log.info("wrote %d hypotheses to %s", len(records), args.out)
    return 0


# -- score ------------------------------------------------------------------------

def cmd_score(args) -> int:
    from . import plotting
    from .io import read_jsonl, read_mixture_manifest, references_of
    from .scoring import counting_table, score_corpus, wer_table

    refs = {r["mixture_id"]: references_of(r) for r in read_mixture_manifest(args.manifest)}
    items = []
    for h in read_jsonl(args.hyps):
        mid = h["mixture_id"]
        if mid not in refs:
            raise CommandError(f"hypothesis for unknown mixture {mid}")
        items.append({"mixture_id": mid, "refs": refs[mid], "hyps": [t.split() for t in h["transcripts"]],
                      "num_speakers_est": h["num_speakers"]})
    missing = set(refs) - {it["mixture_id"] for it in items}
    if missing:
        raise CommandError(f"{len(missing)} mixtures have no hypothesis (e.g. {sorted(missing)[0]})")
    summary = score_corpus(items)
    out = _prepare_out_dir(args.out_dir, True)
    text = "\n\n".join([wer_table(summary, args.label), counting_table(summary.counting)]) + "\n"
    (out / "report.txt").write_text(text)
    report = {"records": summary.records,
              "aggregate": {"wer": summary.total_wer,
                            "wer_by_speakers": {str(k): v for k, v in summary.wer_by_speakers.items()},
                            "counting_matrix": {"actual": summary.counting.actual,
                                                "fractions": summary.counting.fractions.tolist(),
                                                "totals": summary.counting.totals}}}
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    plotting.wer_by_speakers(summary, out / "wer_by_speakers.png", args.label)
    plotting.counting_heatmap(summary.counting, out / "counting_matrix.png")
    print(text, end="")
    return 0


# -- gradcheck --------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .trainer import run_gradcheck_suite

    kinds = args.kinds.split(",") if args.kinds else None
    results = run_gradcheck_suite(kinds, eps=args.eps, max_coords=args.coords, seed=args.seed)
    worst = 0.0
    for kind, rep in results.items():
        worst = max(worst, rep.max_rel_error)
        print(f"{kind:<16} coords={rep.checked:<4d} max_rel_error={rep.max_rel_error:.3e} "
              f"{'ok' if rep.max_rel_error < args.tol else 'FAIL'}")
    return 0 if worst < args.tol else 1


# -- entry ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sotlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a tone-word corpus")
    s.add_argument("--vocab", type=int, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--min-len", type=int, default=4)
    s.add_argument("--max-len", type=int, default=7)
    s.add_argument("--sample-rate", type=int, default=16000)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", help="simulate overlapped mixtures, one per anchor utterance")
    s.add_argument("--manifest", required=True)
    s.add_argument("--speakers", default="2")
    s.add_argument("--mode", choices=["training", "train", "evaluation", "eval"], default="training")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--volume-perturbation", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_mix)

    s = sub.add_parser("train", help="train a model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    s.add_argument("--resume")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("decode", help="decode a mixture manifest")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--beam", type=int, default=4)
    s.add_argument("--max-len", type=int)
    s.add_argument("--frontend-config", help="config file whose [frontend] section overrides the checkpoint's")
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("score", help="permutation-minimal WER and speaker counting report")
    s.add_argument("--hyps", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--label", default="model")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("gradcheck", help="finite-difference check of every loss on tiny models")
    s.add_argument("--kinds", help="comma-separated subset of loss kinds")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--coords", type=int, default=240)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, ValueError, KeyError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
