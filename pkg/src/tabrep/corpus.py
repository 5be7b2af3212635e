"""Table corpus handling: raw JSON tables in, processed splits and vocabs out.

A raw table arrives as one JSON object per line:

    {"table_id": "t1",
     "page_title": "...", "section_title": "...", "caption": "...",
     "headers": ["Year", "Film", ...],
     "rows": [[{"text": "Chiriyakhana", "entity": "Q1"}, "1967"], ...],
     "page_entity": {"entity": "Q7", "text": "..."}}       # optional

Cells are either plain strings or {"text": ..., "entity": ...} objects. The
pipeline lowercases and tokenizes metadata, drops malformed rows and unusable
header columns, finds the subject column, filters and partitions tables, and
builds token/entity vocabularies from the training split.
"""

from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

import numpy as np

from .errors import BadTableError, ConfigError

# Reserved vocabulary rows. Both vocabularies share the low ids so masking
# code never needs to branch on stream type.
PAD_ID = 0
MASK_ID = 1
UNK_ID = 2
SEP_ID = 3
TOKEN_RESERVED = ("<pad>", "<mask>", "<unk>", "<sep>")
ENTITY_RESERVED = ("<pad>", "<mask>", "<unk>")

# Header strings that never carry schema meaning.
ILLEGAL_HEADERS = frozenset({"note", "notes", "comment", "comments", "reference", "references"})


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...


class WordTokenizer:
    """Lowercase, split on whitespace and Unicode punctuation. Digits survive."""

    def tokenize(self, text: str) -> list[str]:
        out: list[str] = []
        cur: list[str] = []
        for ch in text.lower():
            if ch.isspace() or unicodedata.category(ch).startswith("P"):
                if cur:
                    out.append("".join(cur))
                    cur = []
            else:
                cur.append(ch)
        if cur:
            out.append("".join(cur))
        return out


_DEFAULT_TOKENIZER = WordTokenizer()


def normalize_header(text: str, tokenizer: Tokenizer = _DEFAULT_TOKENIZER) -> str:
    """Canonical header key: lowercased tokens joined by single spaces."""
    return " ".join(tokenizer.tokenize(text))


# ---------------------------------------------------------------------------
# record types


@dataclass
class RawCell:
    text: str
    entity: Optional[str] = None


@dataclass
class RawTable:
    table_id: str
    page_title: str
    section_title: str
    caption: str
    headers: list[str]
    rows: list[list[RawCell]]
    page_entity: Optional[tuple[str, str]] = None  # (entity ref, display text)


@dataclass
class ProcCell:
    row: int
    col: int
    text: str
    entity: Optional[str] = None
    mention_tokens: list[str] = field(default_factory=list)


@dataclass
class ProcessedTable:
    """Cleaned table with tokenized metadata and resolved cell links."""

    table_id: str
    caption_tokens: list[str]
    headers: list[str]
    header_tokens: list[list[str]]
    n_rows: int
    cells: list[ProcCell]
    topic: Optional[tuple[str, list[str]]] = None
    subject_col: Optional[int] = None

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def linked_cells(self) -> list[ProcCell]:
        return [c for c in self.cells if c.entity is not None]


@dataclass
class IndexedCell:
    row: int
    col: int
    entity_id: int
    mention_ids: np.ndarray


@dataclass
class IndexedTable:
    """ProcessedTable with vocabulary ids resolved; what the encoder consumes."""

    table_id: str
    caption_ids: np.ndarray
    header_ids: list[np.ndarray]
    headers_norm: list[str]
    n_rows: int
    n_cols: int
    cells: list[IndexedCell]
    topic: Optional[tuple[int, np.ndarray]] = None
    subject_col: Optional[int] = None

    def entity_ids(self) -> np.ndarray:
        ids = [c.entity_id for c in self.cells]
        if self.topic is not None:
            ids.append(self.topic[0])
        return np.array(sorted(set(ids)), dtype=np.int64)

    def subject_cells(self) -> list[IndexedCell]:
        if self.subject_col is None:
            return []
        return [c for c in self.cells if c.col == self.subject_col]


# ---------------------------------------------------------------------------
# vocabulary


class Vocab:
    """Append-only string table with counts; ids are dense from zero."""

    def __init__(self, reserved: tuple[str, ...]):
        self.strings: list[str] = list(reserved)
        self.counts: list[int] = [0] * len(reserved)
        self._index: dict[str, int] = {s: i for i, s in enumerate(reserved)}
        self.n_reserved = len(reserved)

    def __len__(self) -> int:
        return len(self.strings)

    def add(self, s: str, count: int) -> int:
        if s in self._index:
            raise ConfigError(f"duplicate vocab entry {s!r}")
        self.strings.append(s)
        self.counts.append(count)
        self._index[s] = len(self.strings) - 1
        return self._index[s]

    def get(self, s: str) -> Optional[int]:
        return self._index.get(s)

    def id_or_unk(self, s: str) -> int:
        return self._index.get(s, UNK_ID)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, (s, c) in enumerate(zip(self.strings, self.counts)):
                fh.write(f"{i}\t{s}\t{c}\n")

    @classmethod
    def load(cls, path, reserved: tuple[str, ...]) -> "Vocab":
        vocab = cls(reserved)
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ConfigError(f"{path}: bad vocab line {line_no}")
                idx, s, count = int(parts[0]), parts[1], int(parts[2])
                if idx < vocab.n_reserved:
                    if s != vocab.strings[idx]:
                        raise ConfigError(f"{path}: reserved row {idx} is {s!r}")
                    continue
                got = vocab.add(s, count)
                if got != idx:
                    raise ConfigError(f"{path}: non-dense id {idx} at line {line_no}")
        return vocab


def build_vocab(counter: Counter, reserved: tuple[str, ...], min_count: int = 1) -> Vocab:
    """Deterministic vocabulary: sorted by descending count, then string."""
    vocab = Vocab(reserved)
    for s, c in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0])):
        if c >= min_count and s not in reserved:
            vocab.add(s, c)
    return vocab


# ---------------------------------------------------------------------------
# parsing and cleaning


def _parse_cell(obj) -> RawCell:
    if isinstance(obj, str):
        return RawCell(text=obj)
    if isinstance(obj, dict):
        text = obj.get("text", "")
        entity = obj.get("entity")
        if not isinstance(text, str) or not (entity is None or isinstance(entity, str)):
            raise BadTableError(f"bad cell object {obj!r}")
        return RawCell(text=text, entity=entity)
    raise BadTableError(f"cell must be string or object, got {type(obj).__name__}")


def parse_raw(obj: dict) -> RawTable:
    """Validate one JSON record into a RawTable."""
    if not isinstance(obj, dict):
        raise BadTableError("table record must be an object")
    table_id = obj.get("table_id")
    headers = obj.get("headers")
    rows = obj.get("rows")
    if not isinstance(table_id, str) or not table_id:
        raise BadTableError("missing table_id")
    if not isinstance(headers, list) or not headers or not all(isinstance(h, str) for h in headers):
        raise BadTableError(f"{table_id}: headers must be a non-empty string list")
    if not isinstance(rows, list):
        raise BadTableError(f"{table_id}: rows must be a list")
    parsed_rows = []
    for r in rows:
        if not isinstance(r, list):
            raise BadTableError(f"{table_id}: row must be a list")
        parsed_rows.append([_parse_cell(c) for c in r])
    pe = obj.get("page_entity")
    page_entity = None
    if pe is not None:
        if not isinstance(pe, dict) or not isinstance(pe.get("entity"), str):
            raise BadTableError(f"{table_id}: bad page_entity")
        page_entity = (pe["entity"], pe.get("text", ""))
    return RawTable(
        table_id=table_id,
        page_title=str(obj.get("page_title", "")),
        section_title=str(obj.get("section_title", "")),
        caption=str(obj.get("caption", "")),
        headers=headers,
        rows=parsed_rows,
        page_entity=page_entity,
    )


def _header_legal(header: str, tokenizer: Tokenizer) -> bool:
    norm = normalize_header(header, tokenizer)
    if not norm:
        return False
    if norm.replace(" ", "").isdigit():
        return False
    return norm not in ILLEGAL_HEADERS


def detect_subject(n_cols: int, cells: list[ProcCell]) -> Optional[int]:
    """Leftmost of the first two columns whose linked entities are all distinct."""
    by_col: dict[int, list[str]] = {}
    for c in cells:
        if c.entity is not None:
            by_col.setdefault(c.col, []).append(c.entity)
    for col in (0, 1):
        if col >= n_cols:
            break
        ents = by_col.get(col, [])
        if ents and len(set(ents)) == len(ents):
            return col
    return None


def process_table(raw: RawTable, tokenizer: Tokenizer = _DEFAULT_TOKENIZER) -> ProcessedTable:
    """Clean one raw table. Raises BadTableError when nothing usable remains."""
    keep_cols = [i for i, h in enumerate(raw.headers) if _header_legal(h, tokenizer)]
    if not keep_cols:
        raise BadTableError(f"{raw.table_id}: no usable header columns")

    # Rows must match the original header width; shorter or longer rows are
    # dropped rather than padded.
    width = len(raw.headers)
    rows = [r for r in raw.rows if len(r) == width]

    cells: list[ProcCell] = []
    for ri, row in enumerate(rows):
        for new_ci, old_ci in enumerate(keep_cols):
            rc = row[old_ci]
            entity = rc.entity
            mention: list[str] = []
            if entity is not None:
                mention = tokenizer.tokenize(rc.text)
                if not mention:
                    mention = tokenizer.tokenize(entity)
                if not mention:
                    entity = None  # no surface form at all: treat as unlinked
                    mention = []
            cells.append(ProcCell(row=ri, col=new_ci, text=rc.text, entity=entity, mention_tokens=mention))

    caption_tokens = (
        tokenizer.tokenize(raw.page_title)
        + tokenizer.tokenize(raw.section_title)
        + tokenizer.tokenize(raw.caption)
    )

    topic = None
    if raw.page_entity is not None:
        ref, text = raw.page_entity
        mention = tokenizer.tokenize(text) or tokenizer.tokenize(raw.page_title) or tokenizer.tokenize(ref)
        if mention:
            topic = (ref, mention)

    headers = [raw.headers[i] for i in keep_cols]
    pt = ProcessedTable(
        table_id=raw.table_id,
        caption_tokens=caption_tokens,
        headers=headers,
        header_tokens=[tokenizer.tokenize(h) for h in headers],
        n_rows=len(rows),
        cells=cells,
        topic=topic,
    )
    pt.subject_col = detect_subject(pt.n_cols, pt.cells)
    return pt


# ---------------------------------------------------------------------------
# filters and partition


def pretrain_ok(pt: ProcessedTable, max_cols: int = 20) -> bool:
    """Keep tables that can support masked pre-training."""
    if pt.subject_col is None or pt.n_cols > max_cols:
        return False
    return len(pt.linked_cells()) >= 3


def eval_ok(pt: ProcessedTable) -> bool:
    """Stricter filter for tables usable as held-out task instances."""
    if pt.subject_col is None:
        return False
    linked = pt.linked_cells()
    subject_links = sum(1 for c in linked if c.col == pt.subject_col)
    if subject_links <= 4:
        return False
    linked_by_col: dict[int, int] = {}
    for c in linked:
        linked_by_col[c.col] = linked_by_col.get(c.col, 0) + 1
    entity_cols = sorted(linked_by_col)
    if len(entity_cols) < 3:
        return False
    total_cells = pt.n_rows * len(entity_cols)
    total_linked = sum(linked_by_col[c] for c in entity_cols)
    return total_linked * 2 > total_cells


def partition(tables: list[ProcessedTable], seed: int) -> dict[str, list[ProcessedTable]]:
    """Split into train/valid/test.

    Evaluation-eligible tables are shuffled (seeded) and divided about 1:1
    into valid and test; they never enter train. Everything else that passes
    the pre-training filter goes to train.
    """
    eligible = [t for t in tables if eval_ok(t)]
    rest = [t for t in tables if not eval_ok(t) and pretrain_ok(t)]
    order = np.random.default_rng(seed).permutation(len(eligible))
    shuffled = [eligible[i] for i in order]
    half = len(shuffled) // 2
    return {"train": rest, "valid": shuffled[:half], "test": shuffled[half:]}


# ---------------------------------------------------------------------------
# vocabulary construction and id resolution


def count_tokens(tables: Iterable[ProcessedTable]) -> Counter:
    counter: Counter = Counter()
    for t in tables:
        counter.update(t.caption_tokens)
        for toks in t.header_tokens:
            counter.update(toks)
        for c in t.cells:
            if c.entity is not None:
                counter.update(c.mention_tokens)
        if t.topic is not None:
            counter.update(t.topic[1])
    return counter


def count_entities(tables: Iterable[ProcessedTable]) -> Counter:
    counter: Counter = Counter()
    for t in tables:
        for c in t.cells:
            if c.entity is not None:
                counter[c.entity] += 1
        if t.topic is not None:
            counter[t.topic[0]] += 1
    return counter


def build_vocabs(
    train_tables: list[ProcessedTable],
    min_token_count: int = 1,
    min_entity_count: int = 2,
) -> tuple[Vocab, Vocab]:
    token_vocab = build_vocab(count_tokens(train_tables), TOKEN_RESERVED, min_token_count)
    entity_vocab = build_vocab(count_entities(train_tables), ENTITY_RESERVED, min_entity_count)
    return token_vocab, entity_vocab


def index_table(pt: ProcessedTable, token_vocab: Vocab, entity_vocab: Vocab) -> IndexedTable:
    """Resolve strings to ids. Cells whose entity fell out of vocabulary are
    treated as unlinked and silently dropped from the entity grid."""

    def tok_ids(tokens: list[str]) -> np.ndarray:
        return np.array([token_vocab.id_or_unk(t) for t in tokens], dtype=np.int64)

    cells = []
    for c in pt.cells:
        if c.entity is None:
            continue
        eid = entity_vocab.get(c.entity)
        if eid is None:
            continue
        cells.append(
            IndexedCell(row=c.row, col=c.col, entity_id=eid, mention_ids=tok_ids(c.mention_tokens))
        )
    topic = None
    if pt.topic is not None:
        tid = entity_vocab.get(pt.topic[0])
        if tid is not None:
            topic = (tid, tok_ids(pt.topic[1]))
    return IndexedTable(
        table_id=pt.table_id,
        caption_ids=tok_ids(pt.caption_tokens),
        header_ids=[tok_ids(toks) for toks in pt.header_tokens],
        headers_norm=[" ".join(toks) for toks in pt.header_tokens],
        n_rows=pt.n_rows,
        n_cols=pt.n_cols,
        cells=cells,
        topic=topic,
        subject_col=pt.subject_col,
    )


# ---------------------------------------------------------------------------
# serialization


def processed_to_json(pt: ProcessedTable) -> dict:
    return {
        "table_id": pt.table_id,
        "caption_tokens": pt.caption_tokens,
        "headers": pt.headers,
        "header_tokens": pt.header_tokens,
        "n_rows": pt.n_rows,
        "cells": [
            {
                "row": c.row,
                "col": c.col,
                "text": c.text,
                "entity": c.entity,
                "mention_tokens": c.mention_tokens,
            }
            for c in pt.cells
        ],
        "topic": None if pt.topic is None else {"entity": pt.topic[0], "mention_tokens": pt.topic[1]},
        "subject_col": pt.subject_col,
    }


def processed_from_json(obj: dict) -> ProcessedTable:
    cells = [
        ProcCell(
            row=c["row"],
            col=c["col"],
            text=c.get("text", ""),
            entity=c.get("entity"),
            mention_tokens=list(c.get("mention_tokens", [])),
        )
        for c in obj["cells"]
    ]
    topic = None
    if obj.get("topic") is not None:
        topic = (obj["topic"]["entity"], list(obj["topic"]["mention_tokens"]))
    return ProcessedTable(
        table_id=obj["table_id"],
        caption_tokens=list(obj["caption_tokens"]),
        headers=list(obj["headers"]),
        header_tokens=[list(t) for t in obj["header_tokens"]],
        n_rows=obj["n_rows"],
        cells=cells,
        topic=topic,
        subject_col=obj.get("subject_col"),
    )


def write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def load_raw_tables(path, tokenizer: Tokenizer = _DEFAULT_TOKENIZER):
    """Parse and process a raw JSONL corpus.

    Returns (processed tables, skip log). Tables that fail validation or
    cleaning are skipped and recorded, not fatal.
    """
    tables: list[ProcessedTable] = []
    skipped: list[tuple[str, str]] = []
    for i, obj in enumerate(read_jsonl(path)):
        try:
            raw = parse_raw(obj)
            tables.append(process_table(raw, tokenizer))
        except BadTableError as exc:
            skipped.append((obj.get("table_id", f"line{i}") if isinstance(obj, dict) else f"line{i}", str(exc)))
    return tables, skipped


def load_processed(path) -> list[ProcessedTable]:
    return [processed_from_json(obj) for obj in read_jsonl(path)]


def save_processed(path, tables: Iterable[ProcessedTable]) -> None:
    write_jsonl(path, (processed_to_json(t) for t in tables))
