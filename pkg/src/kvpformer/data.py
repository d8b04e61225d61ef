"""FUNSD-format ingestion, gold relations, reading order, and synthetic forms.

Documents are loaded from (and written back to) the FUNSD annotation
schema: one JSON file per page with a top-level "form" array whose
elements carry "id", "text", "box", "label", "words" and "linking".
Synthetic training data is emitted in the same schema so every
downstream tool is format-agnostic.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BBox, normalize_box, union_box

LABELS = ("question", "answer", "header", "other")
LABEL_TO_INDEX = {name: i for i, name in enumerate(LABELS)}

# page size assumed for annotation files that carry no page metadata;
# coordinates in such files are treated as already grid-normalized
DEFAULT_PAGE_SIZE = (1000, 1000)


class DataError(ValueError):
    """Raised for malformed annotation files, with file and field context."""


@dataclass(frozen=True)
class Word:
    """A single word with its own box; text is non-empty after trimming."""

    text: str
    box: BBox

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("word text is empty after whitespace trim")


@dataclass(frozen=True)
class RelationPair:
    """Directed key->value link between two entity ids."""

    key_id: int
    value_id: int

    def __post_init__(self):
        if self.key_id == self.value_id:
            raise ValueError(f"relation links entity {self.key_id} to itself")


@dataclass(frozen=True)
class Entity:
    """A contiguous text region with a box, a semantic label and out-links."""

    id: int
    words: tuple[Word, ...]
    box: BBox
    label: str
    links: tuple[int, ...] = ()

    def __post_init__(self):
        if self.label not in LABEL_TO_INDEX:
            raise ValueError(f"unknown entity label {self.label!r}")

    @property
    def text(self) -> str:
        return " ".join(w.text for w in self.words)


@dataclass(frozen=True)
class Document:
    """One form page: entities plus the gold set of directed key-value pairs."""

    id: str
    entities: tuple[Entity, ...]
    gold_pairs: frozenset[RelationPair]

    def __post_init__(self):
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ValueError(f"document {self.id}: duplicate entity ids")
        known = set(ids)
        for pair in self.gold_pairs:
            for eid in (pair.key_id, pair.value_id):
                if eid not in known:
                    raise ValueError(
                        f"document {self.id}: relation references missing entity {eid}"
                    )

    def entity_by_id(self, eid: int) -> Entity:
        for e in self.entities:
            if e.id == eid:
                return e
        raise KeyError(eid)


def _canonical_label(raw: object, source: str) -> str:
    if not isinstance(raw, str) or raw.lower() not in LABEL_TO_INDEX:
        raise DataError(f"{source}: unknown label {raw!r}")
    return raw.lower()


def _page_size(payload: dict) -> tuple[float, float]:
    meta = payload.get("meta")
    if isinstance(meta, dict) and "page_width" in meta and "page_height" in meta:
        return float(meta["page_width"]), float(meta["page_height"])
    img = payload.get("img")
    if isinstance(img, dict) and "width" in img and "height" in img:
        return float(img["width"]), float(img["height"])
    return DEFAULT_PAGE_SIZE


def _parse_document(payload: dict, doc_id: str, source: str) -> Document:
    form = payload.get("form")
    if not isinstance(form, list):
        raise DataError(f"{source}: missing top-level 'form' array")
    page_w, page_h = _page_size(payload)

    entities: list[Entity] = []
    pairs: list[RelationPair] = []
    for raw in form:
        try:
            eid = int(raw["id"])
        except (KeyError, TypeError, ValueError):
            raise DataError(f"{source}: entity with missing or non-integer 'id'")
        where = f"{source}: entity {eid}"
        label = _canonical_label(raw.get("label"), where)
        try:
            box = normalize_box(raw["box"], page_w, page_h)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: bad 'box' ({exc})")

        words: list[Word] = []
        for w in raw.get("words", []):
            text = str(w.get("text", ""))
            if not text.strip():
                continue
            try:
                words.append(Word(text, normalize_box(w["box"], page_w, page_h)))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{where}: bad word 'box' ({exc})")
        if words:
            hull = words[0].box
            for w in words[1:]:
                hull = union_box(hull, w.box)
            box = union_box(box, hull)

        links: list[int] = []
        for link in raw.get("linking", []):
            if not isinstance(link, (list, tuple)) or len(link) != 2:
                raise DataError(f"{where}: bad 'linking' entry {link!r}")
            from_id, to_id = int(link[0]), int(link[1])
            try:
                pairs.append(RelationPair(from_id, to_id))
            except ValueError as exc:
                raise DataError(f"{where}: bad 'linking' entry ({exc})")
            if from_id == eid:
                links.append(to_id)

        entities.append(Entity(eid, tuple(words), box, label, tuple(links)))

    try:
        return Document(doc_id, tuple(entities), frozenset(pairs))
    except ValueError as exc:
        raise DataError(f"{source}: {exc}")


def load_funsd(path: str | Path) -> list[Document]:
    """Load annotation files from a FUNSD-schema file or directory.

    Page size is read from an optional "meta" (page_width/page_height)
    or XFUND-style "img" (width/height) block; without either, boxes
    are assumed to already lie on the [0, 1000] grid.

    Raises:
        DataError: malformed JSON, unknown label, or dangling link id,
            naming the offending file and field.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise DataError(f"{path}: no .json annotation files found")
    elif path.is_file():
        files = [path]
    else:
        raise DataError(f"{path}: no such file or directory")

    docs = []
    for f in files:
        try:
            payload = json.loads(f.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{f}: malformed JSON ({exc})")
        docs.append(_parse_document(payload, f.stem, str(f)))
    return docs


def document_to_funsd(doc: Document) -> dict:
    """Serialize a Document back to the FUNSD schema (grid coordinates)."""
    form = []
    for e in doc.entities:
        out_links = sorted(
            [p.value_id for p in doc.gold_pairs if p.key_id == e.id]
        )
        form.append(
            {
                "id": e.id,
                "text": e.text,
                "box": list(e.box.as_tuple()),
                "label": e.label,
                "words": [
                    {"text": w.text, "box": list(w.box.as_tuple())} for w in e.words
                ],
                "linking": [[e.id, v] for v in out_links],
            }
        )
    return {
        "meta": {"page_width": DEFAULT_PAGE_SIZE[0], "page_height": DEFAULT_PAGE_SIZE[1]},
        "form": form,
    }


def save_funsd(docs: Iterable[Document], out_dir: str | Path) -> list[Path]:
    """Write one FUNSD-schema JSON file per document into `out_dir`."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for doc in docs:
        p = out_dir / f"{doc.id}.json"
        p.write_text(
            json.dumps(document_to_funsd(doc), indent=1, sort_keys=True),
            encoding="utf-8",
        )
        paths.append(p)
    return paths


def reading_order(doc: Document) -> list[tuple[int, int]]:
    """Serialize all (entity_id, word_index) pairs top-left to bottom-right.

    Words are grouped into lines by quantizing their vertical centers by
    the document's median word height, then sorted left to right within
    a line; remaining ties fall back to (entity_id, word_index).
    """
    items = [
        (e.id, wi, w) for e in doc.entities for wi, w in enumerate(e.words)
    ]
    if not items:
        return []
    med_h = statistics.median(w.box.height for _, _, w in items)
    med_h = max(1.0, float(med_h))

    def key(item):
        eid, wi, w = item
        line = math.floor(w.box.center_y / med_h + 0.5)
        return (line, w.box.x1, eid, wi)

    return [(eid, wi) for eid, wi, _ in sorted(items, key=key)]


_SYNTH_VALUE_WORDS = (
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf",
    "hotel", "india", "juliet", "kilo", "lima", "mike", "november",
)
_SYNTH_NOISE_WORDS = ("page", "note", "form", "ref", "misc", "draft")

_CHAR_W = 7
_LINE_H = 14


def _word_box(x: int, y: int, text: str) -> BBox:
    return BBox(x, y, x + _CHAR_W * max(1, len(text)), y + _LINE_H)


def synth_forms(
    seed: int,
    count: int,
    grid: tuple[int, int] = (2, 2),
    distractor_fraction: float = 0.25,
) -> list[Document]:
    """Generate deterministic synthetic form documents.

    Each grid cell holds one key entity ("field_k:", label question) and
    one value entity placed to its right or below (label answer), with a
    gold key->value pair. A `distractor_fraction` of the key/value count
    is added as unlinked "other" entities.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    rng = np.random.default_rng(seed)
    cell_w = 1000 // cols
    cell_h = 1000 // rows

    docs = []
    for d in range(count):
        entities: list[Entity] = []
        pairs: list[RelationPair] = []
        next_id = 0
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                cx, cy = c * cell_w, r * cell_h
                jx = int(rng.integers(8, max(9, cell_w // 8)))
                jy = int(rng.integers(8, max(9, cell_h // 8)))
                key_text = f"field_{k}:"
                key_word = Word(key_text, _word_box(cx + jx, cy + jy, key_text))

                val_text = str(rng.choice(_SYNTH_VALUE_WORDS))
                if rng.random() < 0.5 and cx + jx + 150 + _CHAR_W * len(val_text) < cx + cell_w:
                    vx, vy = cx + jx + 150, cy + jy
                else:
                    vx, vy = cx + jx, cy + jy + 2 * _LINE_H
                val_word = Word(val_text, _word_box(vx, vy, val_text))

                key_id, val_id = next_id, next_id + 1
                next_id += 2
                entities.append(
                    Entity(key_id, (key_word,), key_word.box, "question", (val_id,))
                )
                entities.append(Entity(val_id, (val_word,), val_word.box, "answer"))
                pairs.append(RelationPair(key_id, val_id))

        n_other = round(distractor_fraction * 2 * rows * cols)
        for _ in range(n_other):
            r = int(rng.integers(0, rows))
            c = int(rng.integers(0, cols))
            text = str(rng.choice(_SYNTH_NOISE_WORDS))
            x = c * cell_w + int(rng.integers(8, max(9, cell_w // 3)))
            y = r * cell_h + cell_h - 2 * _LINE_H
            w = Word(text, _word_box(x, y, text))
            entities.append(Entity(next_id, (w,), w.box, "other"))
            next_id += 1

        docs.append(
            Document(f"synth-{seed}-{d:04d}", tuple(entities), frozenset(pairs))
        )
    return docs
