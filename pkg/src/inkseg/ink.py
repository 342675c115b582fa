"""Ink data model: strokes, transcriptions, segmentations and labeled samples.

Segmentations are plain ``int64`` numpy arrays of length ``p``; the sentinel
:data:`NONE` (-1) marks points that belong to no character.
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ValidationError

NONE = -1


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def split_graphemes(text: str) -> tuple[str, ...]:
    """NFC-normalize ``text`` and split it into grapheme clusters.

    A cluster is a base character followed by any combining marks that NFC
    could not fold into it.
    """
    text = unicodedata.normalize("NFC", text)
    out: list[str] = []
    for ch in text:
        if out and unicodedata.combining(ch):
            out[-1] += ch
        else:
            out.append(ch)
    return tuple(out)


@dataclass(frozen=True)
class Ink:
    """Ordered strokes of ``(x, y)`` points.

    ``times`` holds optional per-point timestamps; models never read them, only
    the cut enumeration of the ground-truth approximation does.
    """

    strokes: tuple[np.ndarray, ...]
    times: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        if len(self.strokes) == 0:
            raise ValidationError("ink has no strokes")
        strokes = []
        for i, s in enumerate(self.strokes):
            a = np.array(s, dtype=np.float64).reshape(-1, 2) if len(s) else np.empty((0, 2))
            if a.shape[0] == 0:
                raise ValidationError(f"stroke {i} is empty")
            if not np.all(np.isfinite(a)):
                raise ValidationError(f"stroke {i} has a non-finite coordinate")
            strokes.append(_frozen(a))
        object.__setattr__(self, "strokes", tuple(strokes))
        if self.times is not None:
            times = []
            if len(self.times) != len(strokes):
                raise ValidationError("timestamps do not match stroke count")
            for i, (t, s) in enumerate(zip(self.times, strokes)):
                t = np.asarray(t, dtype=np.float64).reshape(-1)
                if t.shape[0] != s.shape[0]:
                    raise ValidationError(f"stroke {i} timestamp count mismatch")
                if not np.all(np.isfinite(t)):
                    raise ValidationError(f"stroke {i} has a non-finite timestamp")
                times.append(_frozen(t))
            object.__setattr__(self, "times", tuple(times))

    @classmethod
    def from_points(cls, strokes, times=None) -> "Ink":
        return cls(tuple(np.asarray(s, dtype=np.float64) for s in strokes),
                   None if times is None else tuple(times))

    @property
    def num_points(self) -> int:
        return sum(s.shape[0] for s in self.strokes)

    @property
    def num_strokes(self) -> int:
        return len(self.strokes)

    @property
    def stroke_sizes(self) -> list[int]:
        return [s.shape[0] for s in self.strokes]

    def points(self) -> np.ndarray:
        """All points as a ``(p, 2)`` array in global index order."""
        return np.concatenate(self.strokes, axis=0)

    def all_times(self) -> np.ndarray | None:
        if self.times is None:
            return None
        return np.concatenate(self.times)

    def stroke_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_strokes), self.stroke_sizes)

    def point_index(self) -> np.ndarray:
        return np.concatenate([np.arange(n) for n in self.stroke_sizes])

    def locate(self, global_index: int) -> tuple[int, int]:
        """Map a global point index to ``(stroke, point-in-stroke)``."""
        if not 0 <= global_index < self.num_points:
            raise IndexError(global_index)
        for s, n in enumerate(self.stroke_sizes):
            if global_index < n:
                return s, global_index
            global_index -= n
        raise AssertionError("unreachable")

    def slice_points(self, start: int, stop: int) -> "InkFragment":
        """Points ``[start, stop)`` in global order, keeping stroke boundaries."""
        if not 0 <= start < stop <= self.num_points:
            raise InputError(f"bad point range [{start}, {stop})")
        strokes, times = [], []
        offset = 0
        for i, s in enumerate(self.strokes):
            lo, hi = max(start - offset, 0), min(stop - offset, s.shape[0])
            if lo < hi:
                strokes.append(s[lo:hi])
                if self.times is not None:
                    times.append(self.times[i][lo:hi])
            offset += s.shape[0]
        return InkFragment(tuple(strokes), tuple(times) if self.times is not None else None,
                           start=start)

    def with_points(self, points: np.ndarray) -> "Ink":
        """Same stroke structure with replaced coordinates."""
        sizes = np.cumsum(self.stroke_sizes)[:-1]
        return Ink(tuple(np.split(np.asarray(points, dtype=np.float64), sizes)), self.times)


@dataclass(frozen=True)
class InkFragment(Ink):
    """A contiguous run of points cut from a larger ink; ``start`` is the
    global index of its first point in the source."""

    start: int = 0


@dataclass(frozen=True)
class CtcSpikes:
    """Sparse ``(global_index, char)`` pairs with strictly increasing indices."""

    entries: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        entries = tuple((int(i), str(c)) for i, c in self.entries)
        idx = [i for i, _ in entries]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("spike indices must be strictly increasing")
        if idx and idx[0] < 0:
            raise ValidationError("negative spike index")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.entries]


def as_segmentation(values) -> np.ndarray:
    """Convert a list of int-or-None into the array representation."""
    return np.array([NONE if v is None else int(v) for v in values], dtype=np.int64)


def segmentation_to_list(seg) -> list:
    return [None if int(v) == NONE else int(v) for v in seg]


def validate_segmentation(seg, p: int, c: int, what: str = "segmentation") -> np.ndarray:
    seg = np.asarray(seg, dtype=np.int64)
    if seg.ndim != 1 or seg.shape[0] != p:
        raise ValidationError(f"{what} length {seg.shape[0] if seg.ndim else 0} != point count {p}")
    bad = (seg != NONE) & ((seg < 0) | (seg >= c))
    if np.any(bad):
        raise ValidationError(f"{what} has slot ids outside [0, {c})")
    return _frozen(seg.copy())


@dataclass(frozen=True)
class LabeledSample:
    ink: Ink
    chars: tuple[str, ...]
    spikes: CtcSpikes | None = None
    truth: np.ndarray | None = None
    pred: np.ndarray | None = None
    id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        chars = tuple(unicodedata.normalize("NFC", c) for c in self.chars)
        if len(chars) == 0:
            raise ValidationError("transcription is empty")
        if any(c == "" for c in chars):
            raise ValidationError("transcription has an empty label")
        object.__setattr__(self, "chars", chars)
        p, c = self.ink.num_points, len(chars)
        if self.truth is not None:
            object.__setattr__(self, "truth", validate_segmentation(self.truth, p, c, "truth"))
        if self.pred is not None:
            object.__setattr__(self, "pred", validate_segmentation(self.pred, p, c, "pred"))
        if self.spikes is not None and len(self.spikes) and self.spikes.indices[-1] >= p:
            raise ValidationError(f"spike index {self.spikes.indices[-1]} >= point count {p}")

    @property
    def num_points(self) -> int:
        return self.ink.num_points

    @property
    def num_chars(self) -> int:
        return len(self.chars)

    @property
    def text(self) -> str:
        return "".join(self.chars)

    def replace(self, **changes) -> "LabeledSample":
        from dataclasses import replace
        return replace(self, **changes)


def normalize(ink: Ink) -> Ink:
    """Translate to a zero minimum and scale uniformly to unit y-extent.

    Inks with no vertical extent are scaled by their x-extent instead; a
    fully degenerate ink is only translated.
    """
    pts = ink.points()
    lo = pts.min(axis=0)
    pts = pts - lo
    extent = pts.max(axis=0)
    if extent[1] > 0:
        pts = pts / extent[1]
    elif extent[0] > 0:
        pts = pts / extent[0]
    return ink.with_points(pts)


def normalize_sample(sample: LabeledSample) -> LabeledSample:
    return sample.replace(ink=normalize(sample.ink))
