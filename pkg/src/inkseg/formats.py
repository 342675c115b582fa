"""InkML and JSON-lines readers/writers."""
from __future__ import annotations

import json
import math
import os
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ParseError, SchemaError, ValidationError
from .ink import (CtcSpikes, Ink, LabeledSample, as_segmentation, segmentation_to_list,
                  split_graphemes)

INKML_NS = "http://www.w3.org/2003/InkML"
_TEXT_ANNOTATIONS = ("truth", "transcription", "label", "text")


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _parse_trace(text: str, name: str) -> tuple[np.ndarray, np.ndarray | None]:
    xy, ts = [], []
    for chunk in (text or "").split(","):
        fields = chunk.split()
        if not fields:
            continue
        try:
            values = [float(v) for v in fields]
        except ValueError:
            raise ParseError(f"trace {name}: unparsable tuple {chunk.strip()!r}") from None
        if len(values) < 2:
            raise ParseError(f"trace {name}: tuple {chunk.strip()!r} has fewer than 2 values")
        if not (math.isfinite(values[0]) and math.isfinite(values[1])):
            raise ValidationError(f"trace {name}: non-finite coordinate")
        xy.append(values[:2])
        ts.append(values[2] if len(values) > 2 else None)
    if not xy:
        raise ParseError(f"trace {name}: no parsable tuple")
    times = None if any(t is None for t in ts) else np.array(ts)
    return np.array(xy, dtype=np.float64), times


def read_inkml(data: bytes | str) -> tuple[Ink, tuple[str, ...] | None]:
    """Parse an InkML document into an :class:`Ink` and an optional transcription."""
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, col = exc.position
        raise ParseError("malformed XML", line, col) from None
    strokes, times = [], []
    text = None
    fallback = None
    for n, el in enumerate(root.iter()):
        tag = _local(el.tag)
        if tag == "trace":
            name = el.get("id") or el.get("{http://www.w3.org/XML/1998/namespace}id") or f"#{len(strokes)}"
            xy, t = _parse_trace(el.text, name)
            strokes.append(xy)
            times.append(t)
        elif tag == "annotation" and el.text and el.text.strip():
            if el.get("type", "").lower() in _TEXT_ANNOTATIONS and text is None:
                text = el.text.strip()
            elif fallback is None:
                fallback = el.text.strip()
    if not strokes:
        raise ParseError("no traces")
    text = text if text is not None else fallback
    # timestamps are kept only if every trace carries them
    keep_times = all(t is not None for t in times)
    ink = Ink(tuple(strokes), tuple(times) if keep_times else None)
    return ink, (split_graphemes(text) if text else None)


def parse_inkml(data: bytes | str, text: str | None = None) -> LabeledSample:
    """Parse an InkML document; ``text`` supplies the transcription when the
    document has no annotation (and overrides it otherwise)."""
    ink, chars = read_inkml(data)
    if text is not None:
        chars = split_graphemes(text)
    if not chars:
        raise SchemaError("InkML document has no transcription annotation; supply text")
    return LabeledSample(ink, chars)


def _num(v: float) -> str:
    return repr(float(v))


def serialize_inkml(sample: LabeledSample) -> bytes:
    root = ET.Element("ink", xmlns=INKML_NS)
    ann = ET.SubElement(root, "annotation", type="truth")
    ann.text = sample.text
    ink = sample.ink
    for i, s in enumerate(ink.strokes):
        tr = ET.SubElement(root, "trace", id=f"t{i}")
        if ink.times is not None:
            tr.text = ", ".join(f"{_num(x)} {_num(y)} {_num(t)}" for (x, y), t in zip(s, ink.times[i]))
        else:
            tr.text = ", ".join(f"{_num(x)} {_num(y)}" for x, y in s)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def parse_jsonl(line: bytes | str) -> LabeledSample:
    """Parse one corpus line.

    Schema: ``strokes`` (list of lists of ``[x, y]`` or ``[x, y, t]``),
    ``text``, optional ``spikes`` (``[[index, char], ...]``), ``truth`` and
    ``pred`` (lists of int or null), ``id``.
    """
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(obj, dict):
        raise SchemaError("corpus line is not a JSON object")
    for key in ("strokes", "text"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
    if not isinstance(obj["text"], str):
        raise SchemaError("field 'text' must be a string")
    raw = obj["strokes"]
    if not isinstance(raw, list):
        raise SchemaError("field 'strokes' must be an array")
    strokes, times = [], []
    try:
        for s in raw:
            a = np.array(s, dtype=np.float64)
            if a.ndim != 2 or a.shape[1] not in (2, 3):
                raise SchemaError("each stroke must be an array of [x, y] or [x, y, t]")
            strokes.append(a[:, :2])
            times.append(a[:, 2] if a.shape[1] == 3 else None)
    except (TypeError, ValueError):
        raise SchemaError("stroke points must be numeric arrays") from None
    keep_times = bool(times) and all(t is not None for t in times)
    ink = Ink(tuple(strokes), tuple(times) if keep_times else None)
    spikes = None
    if obj.get("spikes") is not None:
        try:
            spikes = CtcSpikes(tuple((int(i), str(c)) for i, c in obj["spikes"]))
        except (TypeError, ValueError):
            raise SchemaError("spikes must be [index, char] pairs") from None
    seg = {}
    for key in ("truth", "pred"):
        if obj.get(key) is not None:
            vals = obj[key]
            if not isinstance(vals, list) or any(v is not None and not isinstance(v, int) for v in vals):
                raise SchemaError(f"field {key!r} must be an array of int or null")
            seg[key] = as_segmentation(vals)
    return LabeledSample(ink, split_graphemes(obj["text"]), spikes=spikes,
                         truth=seg.get("truth"), pred=seg.get("pred"), id=obj.get("id"))


def to_jsonl(sample: LabeledSample) -> str:
    ink = sample.ink
    strokes = []
    for i, s in enumerate(ink.strokes):
        if ink.times is not None:
            strokes.append([[float(x), float(y), float(t)] for (x, y), t in zip(s, ink.times[i])])
        else:
            strokes.append([[float(x), float(y)] for x, y in s])
    obj = {}
    if sample.id is not None:
        obj["id"] = sample.id
    obj["text"] = sample.text
    obj["strokes"] = strokes
    if sample.spikes is not None:
        obj["spikes"] = [[i, c] for i, c in sample.spikes]
    if sample.truth is not None:
        obj["truth"] = segmentation_to_list(sample.truth)
    if sample.pred is not None:
        obj["pred"] = segmentation_to_list(sample.pred)
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_corpus(path) -> list[LabeledSample]:
    samples = []
    with open(path, "rb") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                samples.append(parse_jsonl(line))
            except (ParseError, SchemaError, ValidationError) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from None
    return samples


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary sibling file so a failed run leaves nothing behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_corpus(path, samples: Iterable[LabeledSample]) -> None:
    atomic_write(path, "".join(to_jsonl(s) + "\n" for s in samples))
