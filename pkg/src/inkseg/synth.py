"""Synthetic handwriting with exact point-level character labels.

Glyphs are polyline templates in a box whose baseline is ``y = 0`` and whose
x-height is 0.5 (y grows upwards here; emitted ink has y growing downwards).
Diacritic-bearing glyphs carry separate mark strokes that can be written
late, after one to three following characters, which yields the delayed
strokes that break temporal monotonicity.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .features import simulate_ctc_spikes
from .ink import Ink, LabeledSample


@dataclass(frozen=True)
class Glyph:
    char: str
    width: float
    strokes: tuple  # tuple of (n, 2) vertex arrays
    marks: tuple = ()

    def to_dict(self):
        return {"char": self.char, "width": self.width,
                "strokes": [np.asarray(s).tolist() for s in self.strokes],
                "marks": [np.asarray(s).tolist() for s in self.marks]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["char"], float(d["width"]),
                   tuple(np.asarray(s, dtype=float) for s in d["strokes"]),
                   tuple(np.asarray(s, dtype=float) for s in d.get("marks", [])))


def _arc(cx, cy, r, a0, a1, n=16):
    t = np.radians(np.linspace(a0, a1, n))
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=1)


def _poly(*pts):
    return np.array(pts, dtype=float)


_CIRCUMFLEX = _poly((0.08, 0.62), (0.25, 0.84), (0.42, 0.62))

BUILTIN_GLYPHS = {
    "a": Glyph("a", 0.5, (np.vstack([_arc(0.24, 0.25, 0.24, 20, 380), _poly((0.48, 0.5), (0.48, 0.0))]),)),
    "c": Glyph("c", 0.45, (_arc(0.25, 0.25, 0.25, 50, 310),)),
    "e": Glyph("e", 0.5, (np.vstack([_poly((0.02, 0.25), (0.48, 0.25)), _arc(0.25, 0.25, 0.23, 10, 320)]),)),
    "l": Glyph("l", 0.2, (_poly((0.06, 1.0), (0.06, 0.06), (0.18, 0.0)),)),
    "m": Glyph("m", 0.62, (_poly((0.0, 0.0), (0.0, 0.5), (0.0, 0.35), (0.1, 0.5), (0.2, 0.5), (0.3, 0.4),
                                 (0.3, 0.0), (0.3, 0.4), (0.4, 0.5), (0.5, 0.5), (0.6, 0.4), (0.6, 0.0)),)),
    "n": Glyph("n", 0.38, (_poly((0.0, 0.0), (0.0, 0.5), (0.0, 0.35), (0.12, 0.5), (0.26, 0.5),
                                 (0.36, 0.4), (0.36, 0.0)),)),
    "o": Glyph("o", 0.5, (_arc(0.25, 0.25, 0.25, 90, 450),)),
    "t": Glyph("t", 0.3, (_poly((0.12, 0.9), (0.12, 0.06), (0.24, 0.0)), _poly((0.0, 0.55), (0.28, 0.55)))),
    "u": Glyph("u", 0.38, (_poly((0.0, 0.5), (0.0, 0.1), (0.1, 0.0), (0.25, 0.0), (0.36, 0.1),
                                 (0.36, 0.5), (0.36, 0.0)),)),
    "v": Glyph("v", 0.4, (_poly((0.0, 0.5), (0.19, 0.0), (0.38, 0.5)),)),
    "ê": Glyph("ê", 0.5, (np.vstack([_poly((0.02, 0.25), (0.48, 0.25)), _arc(0.25, 0.25, 0.23, 10, 320)]),),
               (_CIRCUMFLEX,)),
    "ô": Glyph("ô", 0.5, (_arc(0.25, 0.25, 0.25, 90, 450),), (_CIRCUMFLEX,)),
}
BASE_ALPHABET = tuple("acelmnotuv")
FULL_ALPHABET = BASE_ALPHABET + ("ê", "ô")


def _range(v, name, lo=-math.inf, hi=math.inf):
    a, b = v
    if a > b:
        raise ConfigError(f"{name}: empty range {v}")
    if a < lo or b > hi:
        raise ConfigError(f"{name}: range {v} outside [{lo}, {hi}]")
    return (a, b)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ranges are inclusive ``(low, high)`` pairs."""

    alphabet: tuple = FULL_ALPHABET
    chars_per_sample: tuple = (3, 7)
    slant: tuple = (-0.1, 0.3)
    overlap: tuple = (0.0, 0.15)
    delayed_stroke_rate: float = 0.3
    cursive_join_rate: float = 0.3
    points_per_glyph: tuple = (10, 18)
    noise_sigma: float = 0.008
    seed: int = 0
    # probability of drawing a diacritic-bearing glyph; None samples the alphabet uniformly
    diacritic_share: float | None = None
    spacing: float = 0.18
    delayed_shift: float = 0.25
    # sampling density of marks relative to their glyph; small marks are drawn slowly
    mark_density: float = 1.0
    with_spikes: bool = True
    spike_jitter: int = 0
    spike_drop: float = 0.0
    ink_scale: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "alphabet", tuple(self.alphabet))
        for name in ("chars_per_sample", "slant", "overlap", "points_per_glyph"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.alphabet:
            raise ConfigError("alphabet is empty")
        for g in self.alphabet:
            if isinstance(g, str) and g not in BUILTIN_GLYPHS:
                raise ConfigError(f"unknown built-in glyph {g!r}")
        _range(self.chars_per_sample, "chars_per_sample", 1)
        _range(self.slant, "slant", -1.2, 1.2)
        _range(self.overlap, "overlap", -1.0, 0.9)
        lo, hi = _range(self.points_per_glyph, "points_per_glyph")
        if hi < 2:
            raise ConfigError("points_per_glyph maximum must be at least 2")
        for name in ("delayed_stroke_rate", "cursive_join_rate", "spike_drop"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.diacritic_share is not None and not 0.0 <= self.diacritic_share <= 1.0:
            raise ConfigError("diacritic_share must be in [0, 1]")
        if self.mark_density <= 0:
            raise ConfigError("mark_density must be positive")
        if self.noise_sigma < 0 or self.spike_jitter < 0:
            raise ConfigError("noise_sigma and spike_jitter must be non-negative")

    def glyphs(self) -> list[Glyph]:
        return [BUILTIN_GLYPHS[g] if isinstance(g, str) else g for g in self.alphabet]

    def to_dict(self):
        d = asdict(self)
        d["alphabet"] = [g if isinstance(g, str) else g.to_dict() for g in self.alphabet]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "alphabet" in d:
            d["alphabet"] = tuple(g if isinstance(g, str) else Glyph.from_dict(g) for g in d["alphabet"])
        return cls(**d)

    def replace(self, **changes) -> "SynthConfig":
        from dataclasses import replace
        return replace(self, **changes)


PRESETS = {
    "default": SynthConfig(),
    "monotone": SynthConfig(alphabet=BASE_ALPHABET, delayed_stroke_rate=0.0),
    "block": SynthConfig(alphabet=BASE_ALPHABET, delayed_stroke_rate=0.0, cursive_join_rate=0.0,
                         overlap=(0.0, 0.0), slant=(0.0, 0.0)),
    "delayed": SynthConfig(delayed_stroke_rate=0.8, diacritic_share=0.8, mark_density=3.0),
}


def preset(name: str, **changes) -> SynthConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    return PRESETS[name].replace(**changes)


def _resample(poly: np.ndarray, n: int) -> np.ndarray:
    """``n`` points equally spaced along the polyline's arc length."""
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0:
        return np.repeat(poly[:1], n, axis=0)
    t = np.linspace(0.0, cum[-1], n)
    return np.stack([np.interp(t, cum, poly[:, 0]), np.interp(t, cum, poly[:, 1])], axis=1)


def _length(poly) -> float:
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


def _allocate(lengths, total: int, minimum: int = 2) -> list[int]:
    """Split ``total`` points over strokes in proportion to their lengths."""
    lengths = np.maximum(np.asarray(lengths, dtype=float), 1e-6)
    raw = lengths / lengths.sum() * total
    return [max(minimum, int(round(r))) for r in raw]


@dataclass
class _Piece:
    points: np.ndarray
    slot: int
    join: bool = False  # continue the current stroke instead of starting one
    mark: bool = False


def _draw_chars(cfg: SynthConfig, rng: np.random.Generator) -> list[Glyph]:
    glyphs = cfg.glyphs()
    n = int(rng.integers(cfg.chars_per_sample[0], cfg.chars_per_sample[1] + 1))
    with_marks = [g for g in glyphs if g.marks]
    plain = [g for g in glyphs if not g.marks]
    out = []
    for _ in range(n):
        if cfg.diacritic_share is not None and with_marks and plain:
            pool = with_marks if rng.random() < cfg.diacritic_share else plain
        else:
            pool = glyphs
        out.append(pool[int(rng.integers(len(pool)))])
    return out


def generate_sample(cfg: SynthConfig, index: int) -> LabeledSample:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    glyphs = _draw_chars(cfg, rng)
    slant = math.tan(rng.uniform(*cfg.slant))
    density = None
    placed = []  # (glyph, transform) per character
    cursor = 0.0
    for g in glyphs:
        scale = rng.uniform(0.9, 1.1)
        dy = rng.normal(0.0, 0.02)
        placed.append((g, cursor, scale, dy))
        cursor += g.width * scale * (1.0 - rng.uniform(*cfg.overlap)) + cfg.spacing

    def transform(pts, x0, scale, dy, extra_dx=0.0):
        pts = pts * scale
        x = pts[:, 0] + pts[:, 1] * slant + x0 + extra_dx
        y = pts[:, 1] + dy
        return np.stack([x, y], axis=1)

    base_pieces: list[list[_Piece]] = []
    mark_pieces: list[list[_Piece]] = []
    for slot, (g, x0, scale, dy) in enumerate(placed):
        n_total = int(rng.integers(cfg.points_per_glyph[0], cfg.points_per_glyph[1] + 1))
        lengths = [_length(s) for s in g.strokes]
        counts = _allocate(lengths, n_total)
        density = n_total / max(sum(lengths), 1e-6)
        pieces = []
        for s, n in zip(g.strokes, counts):
            pieces.append(_Piece(transform(_resample(s, n), x0, scale, dy), slot))
        base_pieces.append(pieces)
        marks = []
        for m in g.marks:
            n = max(4, int(round(_length(m) * density * cfg.mark_density)))
            marks.append((m, n, x0, scale, dy))
        mark_pieces.append(marks)

    # decide where each mark is written: immediately, or after 1-3 later glyphs
    c = len(glyphs)
    pending: dict[int, list[_Piece]] = {}
    order: list[_Piece] = []
    for slot in range(c):
        for k, piece in enumerate(base_pieces[slot]):
            if k == 0 and slot > 0 and order and not order[-1].mark and rng.random() < cfg.cursive_join_rate:
                piece.join = True
            order.append(piece)
        for m, n, x0, scale, dy in mark_pieces[slot]:
            delay = 0
            if slot < c - 1 and rng.random() < cfg.delayed_stroke_rate:
                delay = min(int(rng.integers(1, 4)), c - 1 - slot)
            shift = rng.uniform(0.0, cfg.delayed_shift) * glyphs[slot].width if delay else 0.0
            pts = transform(_resample(m, n), x0, scale, dy, shift)
            mp = _Piece(pts, slot, mark=True)
            if delay:
                pending.setdefault(slot + delay, []).append(mp)
            else:
                order.append(mp)
        for mp in pending.pop(slot, []):
            order.append(mp)

    strokes, times, truth = [], [], []
    t = 0.0
    for piece in order:
        pts = piece.points + rng.normal(0.0, cfg.noise_sigma, piece.points.shape)
        n = pts.shape[0]
        if piece.join and strokes:
            t += rng.uniform(8.0, 12.0)
            ts = t + np.arange(n)
            strokes[-1] = np.vstack([strokes[-1], pts])
            times[-1] = np.concatenate([times[-1], ts])
        else:
            t += rng.uniform(15.0, 30.0) if strokes else 0.0
            ts = t + np.arange(n)
            strokes.append(pts)
            times.append(ts)
        t = ts[-1]
        truth.extend([piece.slot] * n)

    origin = rng.uniform(0.0, 500.0, size=2)
    ink_strokes = tuple(np.stack([s[:, 0], -s[:, 1]], axis=1) * cfg.ink_scale + origin for s in strokes)
    ink = Ink(ink_strokes, tuple(times))
    chars = tuple(g.char for g in glyphs)
    truth = np.array(truth, dtype=np.int64)
    spikes = None
    if cfg.with_spikes:
        spikes = simulate_ctc_spikes(truth, chars, cfg.spike_jitter, cfg.spike_drop,
                                     rng_seed=int(rng.integers(2**31)))
    return LabeledSample(ink, chars, spikes=spikes, truth=truth, id=f"synth-{cfg.seed}-{index}")


def generate(cfg: SynthConfig, n: int, jobs: int = 1) -> list[LabeledSample]:
    """``n`` samples; sample ``i`` depends only on ``(cfg, i)`` so any ``jobs`` gives the same corpus."""
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(generate_sample, [cfg] * n, range(n), chunksize=max(1, n // (4 * jobs))))
    return [generate_sample(cfg, i) for i in range(n)]
