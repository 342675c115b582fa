"""mIoU metric, corpus reports and the CTC-spike ablation."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError, ValidationError
from .ink import NONE, LabeledSample

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def sample_miou(pred, truth, c: int) -> float:
    """Mean IoU over the slots that own at least one truth point.

    Predicted NONE points belong to no slot. A slot with truth points but no
    predicted points scores 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction length {pred.shape[0]} != truth length {truth.shape[0]}")
    return float(np.mean(slot_ious(pred, truth, c)[1]))


def slot_ious(pred: np.ndarray, truth: np.ndarray, c: int) -> tuple[np.ndarray, np.ndarray]:
    """``(slots, ious)`` for every slot with a non-empty truth set."""
    valid_t = truth != NONE
    slots = np.unique(truth[valid_t])
    if slots.size == 0:
        raise ValidationError("truth assigns no point to any slot")
    if slots[-1] >= c:
        raise ValidationError(f"truth slot {slots[-1]} >= c={c}")
    ious = np.empty(slots.size)
    for n, k in enumerate(slots):
        g = truth == k
        p = pred == k
        ious[n] = np.count_nonzero(g & p) / np.count_nonzero(g | p)
    return slots, ious


@dataclass
class IouReport:
    per_sample_miou: list[float]
    corpus_miou: float
    per_char: dict[str, dict] = field(default_factory=dict)
    sample_ids: list = field(default_factory=list)
    skipped: int = 0

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "corpus_miou": self.corpus_miou,
                "num_samples": len(self.per_sample_miou), "skipped": self.skipped,
                "per_sample_miou": self.per_sample_miou, "sample_ids": self.sample_ids,
                "per_char": self.per_char}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "id", "miou"])
        for i, (sid, v) in enumerate(zip(self.sample_ids, self.per_sample_miou)):
            w.writerow([i, "" if sid is None else sid, repr(v)])
        return buf.getvalue()


Segmenter = Callable[[LabeledSample], np.ndarray]


def evaluate(samples: Sequence[LabeledSample], segmenter: Segmenter | None = None,
             predictions: Sequence[np.ndarray] | None = None, svg_dir=None) -> IouReport:
    """Score predictions against truth.

    Predictions come from ``predictions`` (aligned with ``samples``), from
    ``segmenter``, or from each sample's ``pred`` field, in that order of
    preference. Samples without truth are skipped and counted.
    """
    per_sample, ids = [], []
    char_sum: dict[str, float] = {}
    char_n: dict[str, int] = {}
    skipped = 0
    for i, s in enumerate(samples):
        if s.truth is None:
            skipped += 1
            continue
        if predictions is not None:
            pred = predictions[i]
        elif segmenter is not None:
            pred = segmenter(s)
        elif s.pred is not None:
            pred = s.pred
        else:
            raise UsageError(f"sample {i} has no prediction")
        pred = np.asarray(pred, dtype=np.int64)
        if pred.shape[0] != s.num_points:
            raise ValidationError(f"sample {i}: prediction length {pred.shape[0]} != {s.num_points}")
        slots, ious = slot_ious(pred, s.truth, s.num_chars)
        per_sample.append(float(ious.mean()))
        ids.append(s.id)
        for k, v in zip(slots, ious):
            ch = s.chars[k]
            char_sum[ch] = char_sum.get(ch, 0.0) + float(v)
            char_n[ch] = char_n.get(ch, 0) + 1
        if svg_dir is not None:
            from pathlib import Path

            from .formats import atomic_write
            from .render import render_svg
            atomic_write(Path(svg_dir) / f"{i:06d}.svg", render_svg(s.ink, pred))
    if skipped:
        log.warning("skipped %d samples without truth", skipped)
    per_char = {ch: {"mean_iou": char_sum[ch] / char_n[ch], "count": char_n[ch]} for ch in sorted(char_sum)}
    corpus = float(np.mean(per_sample)) if per_sample else float("nan")
    return IouReport(per_sample, corpus, per_char, ids, skipped)


@dataclass
class PairedReport:
    with_spikes: IouReport
    without_spikes: IouReport
    label: str = ""

    @property
    def deltas(self) -> np.ndarray:
        return np.array(self.with_spikes.per_sample_miou) - np.array(self.without_spikes.per_sample_miou)

    def summary(self) -> dict:
        d = self.deltas
        return {"method": self.label,
                "with_spikes": self.with_spikes.corpus_miou,
                "without_spikes": self.without_spikes.corpus_miou,
                "mean_delta": float(d.mean()) if d.size else float("nan"),
                "delta_quantiles": {q: float(np.quantile(d, float(q))) for q in ("0.1", "0.25", "0.5", "0.75", "0.9")}
                if d.size else {},
                "fraction_improved": float(np.mean(d > 0)) if d.size else float("nan"),
                "fraction_worse": float(np.mean(d < 0)) if d.size else float("nan")}

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "summary": self.summary(),
                "per_sample": [{"id": i, "with": a, "without": b, "delta": a - b} for i, a, b in
                               zip(self.with_spikes.sample_ids, self.with_spikes.per_sample_miou,
                                   self.without_spikes.per_sample_miou)]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=1)


def ablate_ctc(samples: Sequence[LabeledSample], with_spikes: Segmenter, without_spikes: Segmenter,
               label: str = "") -> PairedReport:
    """Evaluate the same corpus with and without spike information.

    ``without_spikes`` receives samples whose spikes were removed.
    """
    stripped = [s.replace(spikes=None) for s in samples]
    return PairedReport(evaluate(samples, with_spikes), evaluate(stripped, without_spikes), label)


def _comparable(cfg_a: dict, cfg_b: dict) -> bool:
    a = {k: v for k, v in cfg_a.items() if k != "use_spikes"}
    b = {k: v for k, v in cfg_b.items() if k != "use_spikes"}
    return a == b


def ablate_models(samples: Sequence[LabeledSample], with_model, without_model, batch_size: int = 32,
                  label: str | None = None) -> PairedReport:
    """Paired report for two trained models of the same architecture.

    Each side is ``(model, vocab)``. The models may differ only in whether
    they read spike features.
    """
    from .models import model_kind, segment_with_model

    (ma, va), (mb, vb) = with_model, without_model
    ka, kb = model_kind(ma), model_kind(mb)
    if ka != kb or not _comparable(ma.cfg.to_dict(), mb.cfg.to_dict()):
        raise UsageError(f"cannot pair a {ka} model with a {kb} model of a different configuration")
    stripped = [s.replace(spikes=None) for s in samples]
    pa = segment_with_model(ma, va, list(samples), batch_size)
    pb = segment_with_model(mb, vb, stripped, batch_size)
    return PairedReport(evaluate(samples, predictions=pa), evaluate(stripped, predictions=pb), label or ka)


def ablate_kmeans(samples: Sequence[LabeledSample], cfg=None) -> PairedReport:
    """k-means seeded from spikes versus k-means++ seeding on the same corpus."""
    from dataclasses import replace

    from .kmeans import CTC_SPIKES, RANDOM, KMeansConfig, kmeans_segment

    cfg = cfg or KMeansConfig()
    with_cfg, without_cfg = replace(cfg, init=CTC_SPIKES), replace(cfg, init=RANDOM)
    return ablate_ctc(samples, lambda s: kmeans_segment(s, with_cfg),
                      lambda s: kmeans_segment(s, without_cfg), "kmeans")
