"""Loss, optimizer, schedule, EMA and the training loop."""
from __future__ import annotations

import json
import logging
import math
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, InputError
from .evaluation import sample_miou
from .features import Vocabulary
from .ink import LabeledSample
from .models import boundary_targets, build_model, save_model, segment_with_model
from .models.charquery import CharQueryModel
from .models.common import collate, featurize
from .tensor import autograd as ag

log = logging.getLogger(__name__)

DEFAULT_PEAK_LR = {"lstm": 3e-3, "transformer": 1e-3, "charquery": 1e-3}
MASKED_LOGIT = -1e9


@dataclass
class TrainConfig:
    peak_lr: float | None = None  # None: per-architecture default
    warmup_steps: int = 4000
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    label_smoothing: float = 0.1
    ema_decay: float = 0.999
    batch_size: int = 32
    max_steps: int = 20000
    seed: int = 0
    eval_every: int = 500
    log_every: int = 50
    stop_at_miou: float | None = None  # end early once validation reaches this

    def __post_init__(self):
        if not 0 <= self.label_smoothing < 1:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if not 0 < self.ema_decay < 1:
            raise ConfigError("ema_decay must be in (0, 1)")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.batch_size < 1 or self.max_steps < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ConfigError("batch_size, max_steps, eval_every and log_every must be >= 1")
        if self.peak_lr is not None and self.peak_lr <= 0:
            raise ConfigError("peak_lr must be positive")

    def resolved_lr(self, kind: str) -> float:
        return self.peak_lr if self.peak_lr is not None else DEFAULT_PEAK_LR[kind]

    def to_dict(self):
        return asdict(self)


def smoothed_ce(logits, targets, eps: float, mask=None, class_mask=None):
    """Label-smoothed cross-entropy averaged over unmasked rows.

    ``logits`` has shape ``(..., k)`` and ``targets`` the leading shape.
    ``class_mask`` (same shape as ``logits``, or broadcastable over leading
    dims) marks classes that exist for a row; the smoothing mass is spread over
    those only, which matters when character slots are padded.
    """
    if not isinstance(logits, ag.Tensor):
        logits = ag.tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    k = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise InputError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    rows = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).copy()
    rows &= targets >= 0
    if not rows.any():
        raise InputError("every row is masked")
    if np.any(targets[rows] >= k):
        raise InputError(f"target out of range for {k} classes")
    if class_mask is not None:
        valid = np.broadcast_to(np.asarray(class_mask, dtype=bool), logits.shape)
        logits = ag.masked_fill(logits, ~valid, MASKED_LOGIT)
    else:
        valid = np.ones(logits.shape, dtype=bool)
    logp = ag.log_softmax(logits, axis=-1)
    n_valid = valid.sum(-1, keepdims=True)
    weight = np.where(valid, eps / np.maximum(n_valid, 1), 0.0)
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, np.clip(targets, 0, k - 1)[..., None], 1.0, axis=-1)
    weight = weight + (1.0 - eps) * onehot
    weight *= rows[..., None] / rows.sum()
    return ag.mul(ag.sum(ag.mul(logp, weight)), -1.0)


def lr_schedule(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup, then inverse-square-root decay; equals ``peak_lr`` at the warmup step."""
    if step < 1:
        raise InputError("step counts from 1")
    return peak_lr * min(step / warmup_steps, math.sqrt(warmup_steps / step))


@dataclass
class OptimState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, named_params, weight_decay=1e-4, beta1=0.9, beta2=0.98, eps=1e-8):
        self.params = list(named_params)
        self.weight_decay, self.beta1, self.beta2, self.eps = weight_decay, beta1, beta2, eps
        self.state = OptimState({n: np.zeros_like(p.data) for n, p in self.params},
                                {n: np.zeros_like(p.data) for n, p in self.params})

    def step(self, lr: float):
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise DivergenceError(f"non-finite gradient in parameter {name!r}")
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** st.step, 1 - b2 ** st.step
        for name, p in self.params:
            g = p.grad if p.grad is not None else 0.0
            p.data *= 1.0 - lr * self.weight_decay
            m, v = st.m[name], st.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class EMA:
    """Shadow copy of the parameters; ``swap_in`` installs it, ``swap_out`` restores."""

    def __init__(self, named_params):
        self.params = list(named_params)
        self.shadow = {n: p.data.copy() for n, p in self.params}
        self._backup = None

    def update(self, decay: float):
        for n, p in self.params:
            s = self.shadow[n]
            s *= decay
            s += (1.0 - decay) * p.data

    def swap_in(self):
        if self._backup is not None:
            raise InputError("EMA weights are already swapped in")
        self._backup = {n: p.data for n, p in self.params}
        for n, p in self.params:
            p.data = self.shadow[n].copy()

    def swap_out(self):
        if self._backup is None:
            raise InputError("EMA weights are not swapped in")
        for n, p in self.params:
            p.data = self._backup[n]
        self._backup = None


def training_targets(model, sample: LabeledSample) -> np.ndarray:
    if sample.truth is None:
        raise InputError(f"training sample {sample.id!r} has no truth")
    if isinstance(model, CharQueryModel):
        return sample.truth
    return boundary_targets(sample.truth)


def batch_loss(model, samples, feats, targets, vocab, eps):
    batch = collate(samples, feats, vocab, targets)
    logits = model(batch)
    if isinstance(model, CharQueryModel):
        return smoothed_ce(logits, batch.targets, eps, batch.point_mask, batch.char_mask[:, None, :])
    return smoothed_ce(logits, batch.targets, eps, batch.point_mask)


def _batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches: shuffle, sort inside windows of eight
    batches by length to keep padding low, then shuffle the batch order."""
    n = len(lengths)
    while True:
        perm = rng.permutation(n)
        chunks = []
        win = batch_size * 8
        for w in range(0, n, win):
            part = perm[w:w + win]
            part = part[np.argsort(lengths[part], kind="stable")]
            chunks.extend(part[i:i + batch_size] for i in range(0, len(part), batch_size))
        for j in rng.permutation(len(chunks)):
            yield chunks[j]


def validation_miou(model, vocab, samples, batch_size=64) -> float:
    segs = segment_with_model(model, vocab, samples, batch_size)
    return float(np.mean([sample_miou(p, s.truth, s.num_chars) for p, s in zip(segs, samples)]))


@dataclass
class TrainResult:
    model: object
    vocab: Vocabulary
    best_miou: float
    best_step: int
    steps: int
    history: list


def _save_dir(target: Path, model, vocab, extra):
    """Write a checkpoint next to ``target`` and swap it in by rename."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=target.name + ".", dir=target.parent))
    try:
        save_model(tmp, model, vocab, extra)
        if target.exists():
            shutil.rmtree(target)
        tmp.rename(target)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def train(kind: str, corpus: list[LabeledSample], cfg: TrainConfig, validation: list[LabeledSample],
          out_dir=None, model_overrides: dict | None = None, vocab: Vocabulary | None = None) -> TrainResult:
    """Train one model; keeps the EMA weights with the best validation mIoU.

    With ``out_dir`` the best checkpoint goes to ``out_dir/best`` and the
    metrics log to ``out_dir/metrics.jsonl``. The returned model holds the best
    EMA weights.
    """
    if not corpus or not validation:
        raise InputError("training and validation corpora must be non-empty")
    vocab = vocab or Vocabulary.from_corpus(list(corpus) + list(validation))
    model = build_model(kind, len(vocab), cfg.seed, **(model_overrides or {}))
    mode, use_spikes = model.cfg.feature_mode, model.cfg.use_spikes
    feats = featurize(corpus, mode, vocab, use_spikes)
    targets = [training_targets(model, s) for s in corpus]
    lengths = np.array([s.num_points for s in corpus])
    peak = cfg.resolved_lr(kind)

    named = list(model.named_parameters())
    opt = AdamW(named, cfg.weight_decay, cfg.beta1, cfg.beta2)
    ema = EMA(named)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    drop_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    stream = _batches(lengths, cfg.batch_size, rng)

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "metrics.jsonl", "w", encoding="utf-8")
    history = []
    best_miou, best_step, best_state = -1.0, 0, None
    running, n_running = 0.0, 0
    t0 = time.perf_counter()
    step = 0
    try:
        for step in range(1, cfg.max_steps + 1):
            idx = next(stream)
            model.train(True, drop_rng)
            loss = batch_loss(model, [corpus[i] for i in idx], [feats[i] for i in idx],
                              [targets[i] for i in idx], vocab, cfg.label_smoothing)
            value = float(loss.data)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} at step {step}; last good checkpoint kept")
            model.zero_grad()
            ag.backward(loss)
            lr = lr_schedule(step, peak, cfg.warmup_steps)
            opt.step(lr)
            ema.update(cfg.ema_decay)
            running += value
            n_running += 1

            evaluate_now = step % cfg.eval_every == 0 or step == cfg.max_steps
            if step % cfg.log_every == 0 or evaluate_now:
                rec = {"step": step, "loss": running / n_running, "lr": lr, "val_miou": None}
                running, n_running = 0.0, 0
                if evaluate_now:
                    ema.swap_in()
                    try:
                        rec["val_miou"] = validation_miou(model, vocab, validation)
                        if rec["val_miou"] > best_miou:
                            best_miou, best_step = rec["val_miou"], step
                            best_state = model.state_dict()
                            if out is not None:
                                _save_dir(out / "best", model, vocab,
                                          {"step": step, "val_miou": best_miou, "train": cfg.to_dict()})
                    finally:
                        ema.swap_out()
                    log.info("%s step %d loss %.4f val mIoU %.4f (%.0fs)", kind, step, rec["loss"],
                             rec["val_miou"], time.perf_counter() - t0)
                history.append(rec)
                if log_fh is not None:
                    log_fh.write(json.dumps(rec) + "\n")
                    log_fh.flush()
                if evaluate_now and cfg.stop_at_miou is not None and best_miou >= cfg.stop_at_miou:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, vocab, best_miou, best_step, step, history)

