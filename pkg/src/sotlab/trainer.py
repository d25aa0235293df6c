"""Optimization loop, learning-rate schedule, frame-budget batching,
checkpoint files and finite-difference gradient verification."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .aed import AedConfig, AedModel
from .losses import LOSS_KINDS, batch_loss

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    loss_kind: str = "sot_fifo"
    peak_lr: float = 2e-4
    warmup_steps: int | None = None  # None -> 1% of max_steps
    hold_until: int | None = None  # None -> 50% of max_steps
    decay_rate_per: int | None = None  # steps per decade of decay; None -> 75% of max_steps
    frames_per_batch: int = 6000
    max_steps: int = 1000
    valid_every: int = 100
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss_kind!r}; choose from {LOSS_KINDS}")
        if self.warmup > self.hold:
            raise ValueError("warmup_steps must not exceed hold_until")

    @property
    def warmup(self) -> int:
        return self.warmup_steps if self.warmup_steps is not None else max(1, round(0.01 * self.max_steps))

    @property
    def hold(self) -> int:
        return self.hold_until if self.hold_until is not None else round(0.5 * self.max_steps)

    @property
    def decade(self) -> int:
        return self.decay_rate_per if self.decay_rate_per is not None else max(1, round(0.75 * self.max_steps))


FULL_SCALE_SCHEDULE = dict(peak_lr=2e-4, warmup_steps=1000, hold_until=160_000, decay_rate_per=240_000, max_steps=320_000)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0, flat until ``hold``, then one decade of decay per ``decade`` steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < cfg.warmup:
        return cfg.peak_lr * step / cfg.warmup
    if step <= cfg.hold:
        return cfg.peak_lr
    return cfg.peak_lr * 10.0 ** (-(step - cfg.hold) / cfg.decade)


# -- data -------------------------------------------------------------------------

@dataclass
class Sample:
    id: str
    features: np.ndarray  # stacked frames, T' x D
    raw_frames: int  # 10 ms frames before stacking (batch budget unit)
    fifo: list[str]  # serialized reference incl. <eos>
    refs: list[list[str]]  # per-speaker tokens in start-time order


def make_batches(lengths: Sequence[int], frames_per_batch: int, seed: int, epoch: int = 0) -> list[list[int]]:
    """Shuffle with a (seed, epoch) rng, then pack greedily under the frame budget."""
    if lengths and frames_per_batch < max(lengths):
        raise ValueError(f"frame budget {frames_per_batch} is below the longest sample ({max(lengths)} frames)")
    order = np.random.default_rng([seed, epoch]).permutation(len(lengths))
    batches, cur, used = [], [], 0
    for i in order:
        n = lengths[i]
        if cur and used + n > frames_per_batch:
            batches.append(cur)
            cur, used = [], 0
        cur.append(int(i))
        used += n
    if cur:
        batches.append(cur)
    return batches


def collate(samples: Sequence[Sample], dtype=torch.float32):
    lengths = torch.tensor([s.features.shape[0] for s in samples], dtype=torch.long)
    T = int(lengths.max())
    D = samples[0].features.shape[1]
    x = torch.zeros(len(samples), T, D, dtype=dtype)
    for b, s in enumerate(samples):
        x[b, :len(s.features)] = torch.as_tensor(s.features, dtype=dtype)
    return x, lengths


def samples_loss(model: AedModel, kind: str, samples: Sequence[Sample]):
    x, lengths = collate(samples, model.dtype)
    enc = model.encode(x, lengths)
    return batch_loss(model, enc, kind, [{"fifo": s.fifo, "refs": s.refs} for s in samples])


# -- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"SOTCKPT\x00"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    step: int
    model_config: dict
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer_steps: dict[str, int] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)  # {"seed", "epoch", "batch"}
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def tensors(self):
        yield from (("param/" + k, v) for k, v in self.params.items())
        yield from (("optim/" + k, v) for k, v in self.optimizer.items())


def config_hash(*docs: dict) -> str:
    blob = json.dumps(list(docs), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    names = [(n, list(np.shape(v))) for n, v in ckpt.tensors()]
    header = {"version": CKPT_VERSION, "step": ckpt.step, "model_config": ckpt.model_config,
              "optimizer_steps": ckpt.optimizer_steps, "rng_state": ckpt.rng_state,
              "config_hash": ckpt.config_hash, "meta": ckpt.meta, "tensors": names}
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(hb)))
        fh.write(hb)
        for _, v in ckpt.tensors():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen])
    off = 16 + hlen
    params, optim = {}, {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
        kind, key = name.split("/", 1)
        (params if kind == "param" else optim)[key] = arr
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return Checkpoint(header["step"], header["model_config"], params, optim, header["optimizer_steps"],
                      header["rng_state"], header["config_hash"], header.get("meta", {}))


def model_from_checkpoint(ckpt: Checkpoint) -> AedModel:
    model = AedModel(AedConfig.from_dict(ckpt.model_config))
    state = {k: torch.from_numpy(v) for k, v in ckpt.params.items()}
    model.load_state_dict(state)
    return model


def _snapshot(model, opt, step, rng_state, chash, meta=None) -> Checkpoint:
    params = {k: v.detach().cpu().numpy().astype(np.float32).copy() for k, v in model.state_dict().items()}
    optim, steps = {}, {}
    names = {id(p): n for n, p in model.named_parameters()}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            n = names[id(p)]
            optim[n + ".exp_avg"] = st["exp_avg"].detach().numpy().copy()
            optim[n + ".exp_avg_sq"] = st["exp_avg_sq"].detach().numpy().copy()
            steps[n] = int(st["step"])
    return Checkpoint(step, model.config.to_dict(), params, optim, steps, dict(rng_state), chash, meta or {})


def _restore_optimizer(model, opt, ckpt: Checkpoint):
    for n, p in model.named_parameters():
        if n not in ckpt.optimizer_steps:
            continue
        opt.state[p] = {"step": torch.tensor(float(ckpt.optimizer_steps[n])),
                        "exp_avg": torch.from_numpy(ckpt.optimizer[n + ".exp_avg"].copy()),
                        "exp_avg_sq": torch.from_numpy(ckpt.optimizer[n + ".exp_avg_sq"].copy())}


# -- training ---------------------------------------------------------------------

@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list[dict]
    step_losses: list[float]


def _check_compat(model: AedModel, cfg: TrainConfig, train_set: Sequence[Sample]):
    pit = cfg.loss_kind.startswith("pit")
    if pit and model.num_branches < 2:
        raise ValueError(f"loss {cfg.loss_kind} needs a multi-branch model, got {model.num_branches} branch")
    if not pit and model.num_branches != 1:
        raise ValueError(f"loss {cfg.loss_kind} needs a single-branch model")
    if pit:
        over = [s.id for s in train_set if len(s.refs) > model.num_branches]
        if over:
            raise ValueError(f"{len(over)} samples have more speakers than output branches (e.g. {over[0]})")
    if cfg.loss_kind == "single":
        multi = [s.id for s in train_set if len(s.refs) > 1]
        if multi:
            raise ValueError(f"single-speaker loss given multi-speaker sample {multi[0]}")


def evaluate_loss(model, kind: str, samples: Sequence[Sample], frames_per_batch: int) -> float:
    if not samples:
        return float("nan")
    total = 0.0
    with torch.no_grad():
        for idx in make_batches([s.raw_frames for s in samples], frames_per_batch, 0):
            _, per = samples_loss(model, kind, [samples[i] for i in idx])
            total += sum(per)
    return total / len(samples)


def train(model: AedModel, cfg: TrainConfig, train_set: Sequence[Sample], valid_set: Sequence[Sample] = (),
          out_dir=None, resume: Checkpoint | None = None,
          on_log: Callable[[dict], None] | None = None, meta: dict | None = None) -> TrainResult:
    """Adam with the warmup/hold/decay schedule; keeps the best-validation checkpoint.

    The data order for epoch e comes from rng (seed, e), so resuming from a
    checkpoint replays exactly the batches an uninterrupted run would see.
    """
    _check_compat(model, cfg, train_set)
    opt = torch.optim.Adam(model.parameters(), lr=0.0, betas=(0.9, 0.999), eps=1e-8)
    chash = config_hash(model.config.to_dict(), asdict(cfg))
    step, epoch, bidx = 0, 0, 0
    if resume is not None:
        model.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in resume.params.items()})
        _restore_optimizer(model, opt, resume)
        step = resume.step
        epoch, bidx = resume.rng_state["epoch"], resume.rng_state["batch"]
    lengths = [s.raw_frames for s in train_set]
    rng_state = {"seed": cfg.seed, "epoch": epoch, "batch": bidx}
    history: list[dict] = []
    step_losses: list[float] = []
    meta = dict(meta or {})
    best = _snapshot(model, opt, step, rng_state, chash, {**meta, "valid_loss": None})
    best_valid = math.inf
    out = Path(out_dir) if out_dir is not None else None
    batches = make_batches(lengths, cfg.frames_per_batch, cfg.seed, epoch) if train_set else []
    window: list[float] = []
    while step < cfg.max_steps and batches:
        if bidx >= len(batches):
            epoch, bidx = epoch + 1, 0
            batches = make_batches(lengths, cfg.frames_per_batch, cfg.seed, epoch)
        idx = batches[bidx]
        lr = lr_schedule(step, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        total, per = samples_loss(model, cfg.loss_kind, [train_set[i] for i in idx])
        loss = total / len(idx)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}, batch {bidx} of epoch {epoch} "
                                f"(samples {[train_set[i].id for i in idx][:5]})")
        opt.zero_grad()
        loss.backward()
        if cfg.clip_norm:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
        opt.step()
        step += 1
        bidx += 1
        step_losses.append(float(loss.detach()))
        window.append(float(loss.detach()))
        rng_state = {"seed": cfg.seed, "epoch": epoch, "batch": bidx}
        if step % cfg.valid_every == 0 or step == cfg.max_steps:
            valid = evaluate_loss(model, cfg.loss_kind, valid_set, cfg.frames_per_batch)
            entry = {"step": step, "lr": lr, "train_loss": sum(window) / len(window), "valid_loss": valid}
            window = []
            history.append(entry)
            log.info("step %d lr %.3g train %.4f valid %.4f", step, lr, entry["train_loss"], valid)
            if on_log:
                on_log(entry)
            score = valid if valid_set else entry["train_loss"]
            if score < best_valid:
                best_valid = score
                best = _snapshot(model, opt, step, rng_state, chash, {**meta, "valid_loss": valid})
                if out is not None:
                    save_checkpoint(out / "best.ckpt", best)
    last = _snapshot(model, opt, step, rng_state, chash, meta)
    if out is not None:
        save_checkpoint(out / "last.ckpt", last)
        if not history:
            save_checkpoint(out / "best.ckpt", best)
    return TrainResult(best, last, history, step_losses)


# -- gradient verification --------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple[str, int] | None
    checked: int
    errors: list[tuple[str, int, float, float, float]]  # name, flat index, analytic, numeric, rel


# Central differences at eps=1e-5 in float64 carry roughly 1e-10 of absolute noise;
# the floor keeps coordinates whose true gradient is ~0 from dominating the max.
REL_FLOOR = 1e-5


def relative_error(a: float, n: float, floor: float = REL_FLOOR) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Sequence[tuple[str, torch.Tensor]],
               eps: float = 1e-5, max_coords: int | None = 240, seed: int = 0,
               analytic: dict[str, torch.Tensor] | None = None) -> GradCheckReport:
    """Central finite differences against autograd on a seeded coordinate subset.

    The subset covers every parameter tensor (at least one coordinate each),
    the rest drawn uniformly. ``analytic`` overrides the autograd gradients,
    which is how fault injection is tested.
    """
    params = list(params)
    if analytic is None:
        for _, p in params:
            p.grad = None
        loss_fn().backward()
        analytic = {n: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for n, p in params}
    coords = [(n, i) for n, p in params for i in range(p.numel())]
    if max_coords is not None and len(coords) > max_coords:
        rng = np.random.default_rng(seed)
        picks = {(n, int(rng.integers(p.numel()))) for n, p in params}
        rest = [c for c in coords if c not in picks]
        extra = rng.choice(len(rest), size=max(0, max_coords - len(picks)), replace=False)
        coords = sorted(picks | {rest[i] for i in extra})
    lookup = dict(params)
    errors = []
    with torch.no_grad():
        for name, i in coords:
            flat = lookup[name].view(-1)
            orig = float(flat[i])
            flat[i] = orig + eps
            up = float(loss_fn())
            flat[i] = orig - eps
            down = float(loss_fn())
            flat[i] = orig
            num = (up - down) / (2 * eps)
            a = float(analytic[name].reshape(-1)[i])
            errors.append((name, i, a, num, relative_error(a, num)))
    worst = max(errors, key=lambda e: e[4]) if errors else None
    return GradCheckReport(worst[4] if worst else 0.0, (worst[0], worst[1]) if worst else None, len(errors), errors)


def model_grad_check(model: AedModel, kind: str, samples: Sequence[Sample], eps: float = 1e-5,
                     max_coords: int | None = 240, seed: int = 0) -> GradCheckReport:
    """Gradient check of a training objective in 64-bit arithmetic."""
    model.double()
    loss_fn = lambda: samples_loss(model, kind, samples)[0]  # noqa: E731
    return grad_check(loss_fn, list(model.named_parameters()), eps, max_coords, seed)


def tiny_samples(kind: str, input_dim: int, words: Sequence[str], seed: int = 0, frames: int = 5) -> list[Sample]:
    """Two random samples small enough for exhaustive finite differences."""
    rng = np.random.default_rng(seed)
    out = []
    for b in range(2):
        t = frames - b  # unequal lengths exercise the padding path
        feats = rng.standard_normal((t, input_dim))
        if kind == "single":
            refs = [[str(w) for w in rng.choice(words, size=2 + b)]]
        else:
            refs = [[str(w) for w in rng.choice(words, size=2)], [str(w) for w in rng.choice(words, size=1 + b)]]
        fifo = [tok for i, r in enumerate(refs) for tok in ([*r, "<sc>"] if i < len(refs) - 1 else [*r, "<eos>"])]
        out.append(Sample(f"g{b}", feats, 3 * t, fifo, refs))
    return out


GRADCHECK_CASES = {
    "single": dict(),
    "pit_brute": dict(num_branches=2),
    "pit_hungarian": dict(num_branches=2),
    "sot_minperm": dict(),
    "sot_fifo": dict(),
    "sot_fifo+saa": dict(saa=True),
}


def run_gradcheck_suite(kinds: Sequence[str] | None = None, eps: float = 1e-5, max_coords: int | None = 240,
                        seed: int = 0) -> dict[str, GradCheckReport]:
    """Check every loss kind on a tiny double-precision model (M=8, V=6, T'<=5)."""
    from .aed import build_model

    words = ("a", "b", "c", "d")
    results = {}
    for name in kinds or GRADCHECK_CASES:
        if name not in GRADCHECK_CASES:
            raise ValueError(f"unknown grad-check case {name!r}; choose from {sorted(GRADCHECK_CASES)}")
        kind = name.split("+")[0]
        cfg = AedConfig(words=words, input_dim=6, model_dim=8, encoder_layers=2, shared_encoder_layers=1,
                        decoder_layers=2, att_dim=8, att_conv_filters=2, att_conv_width=3, init_range=0.5,
                        **GRADCHECK_CASES[name])
        model = build_model(cfg, seed=seed)
        results[name] = model_grad_check(model, kind, tiny_samples(kind, 6, words, seed), eps, max_coords, seed)
    return results
