"""Turn an indexed table into a flat element sequence plus a visibility matrix.

Sequence order: caption tokens, then the topic entity (when present), then
header tokens column by column, then cell entities row by row. Token positions
restart at zero for the caption stream and for each header; entities always
sit at position zero and are distinguished structurally by (row, column).

Visibility pins which elements may attend to each other:
  - caption tokens and the topic entity see everything and are seen by all;
  - header tokens all see each other;
  - a header token and a cell entity see each other iff same column;
  - two cell entities see each other iff same row or same column;
  - every element sees itself.
Everything else is invisible. The matrix is symmetric by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import IndexedTable, MASK_ID
from .errors import TableTooSmall

# element kinds
CAPTION = 0
HEADER = 1
TOPIC = 2
CELL = 3

# token segment ids (caption vs header stream)
TOKEN_TYPE_CAPTION = 0
TOKEN_TYPE_HEADER = 1

# entity segment ids
ENT_TYPE_SUBJECT = 0
ENT_TYPE_OBJECT = 1
ENT_TYPE_TOPIC = 2


@dataclass
class Element:
    kind: int
    is_entity: bool
    token_id: int = -1
    entity_id: int = -1
    mention_ids: np.ndarray | None = None
    position: int = 0
    row: int = -1
    col: int = -1
    type_id: int = 0


@dataclass
class Sequence:
    """Linearized table. Arrays are parallel, one slot per element."""

    table_id: str
    elements: list[Element]
    kinds: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def token_indices(self) -> np.ndarray:
        return np.flatnonzero(~np.array([e.is_entity for e in self.elements]))

    @property
    def entity_indices(self) -> np.ndarray:
        return np.flatnonzero(np.array([e.is_entity for e in self.elements]))

    def cell_indices(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == CELL)

    def clone(self) -> "Sequence":
        els = [
            Element(
                kind=e.kind,
                is_entity=e.is_entity,
                token_id=e.token_id,
                entity_id=e.entity_id,
                mention_ids=None if e.mention_ids is None else e.mention_ids.copy(),
                position=e.position,
                row=e.row,
                col=e.col,
                type_id=e.type_id,
            )
            for e in self.elements
        ]
        return Sequence(
            table_id=self.table_id,
            elements=els,
            kinds=self.kinds.copy(),
            rows=self.rows.copy(),
            cols=self.cols.copy(),
        )


def linearize(table: IndexedTable, max_len: int = 256) -> Sequence:
    """Flatten a table; trailing whole rows are dropped to honor max_len."""
    meta: list[Element] = []
    for pos, tid in enumerate(table.caption_ids):
        meta.append(Element(kind=CAPTION, is_entity=False, token_id=int(tid), position=pos, type_id=TOKEN_TYPE_CAPTION))
    if table.topic is not None:
        eid, mention = table.topic
        meta.append(
            Element(
                kind=TOPIC,
                is_entity=True,
                entity_id=int(eid),
                mention_ids=np.asarray(mention, dtype=np.int64),
                type_id=ENT_TYPE_TOPIC,
            )
        )
    for col, header in enumerate(table.header_ids):
        for pos, tid in enumerate(header):
            meta.append(
                Element(
                    kind=HEADER,
                    is_entity=False,
                    token_id=int(tid),
                    position=pos,
                    col=col,
                    type_id=TOKEN_TYPE_HEADER,
                )
            )
    if len(meta) > max_len:
        meta = meta[:max_len]

    elements = list(meta)
    by_row: dict[int, list] = {}
    for c in table.cells:
        by_row.setdefault(c.row, []).append(c)
    for row in sorted(by_row):
        cells = sorted(by_row[row], key=lambda c: c.col)
        if len(elements) + len(cells) > max_len:
            break
        for c in cells:
            etype = ENT_TYPE_SUBJECT if c.col == table.subject_col else ENT_TYPE_OBJECT
            elements.append(
                Element(
                    kind=CELL,
                    is_entity=True,
                    entity_id=int(c.entity_id),
                    mention_ids=np.asarray(c.mention_ids, dtype=np.int64),
                    row=c.row,
                    col=c.col,
                    type_id=etype,
                )
            )

    if not elements:
        raise TableTooSmall(f"{table.table_id}: nothing to encode")
    kinds = np.array([e.kind for e in elements], dtype=np.int64)
    rows = np.array([e.row for e in elements], dtype=np.int64)
    cols = np.array([e.col for e in elements], dtype=np.int64)
    return Sequence(table_id=table.table_id, elements=elements, kinds=kinds, rows=rows, cols=cols)


def build_visibility(seq: Sequence) -> np.ndarray:
    """(n, n) uint8 visibility matrix for a linearized table."""
    kinds, rows, cols = seq.kinds, seq.rows, seq.cols
    n = len(kinds)
    meta = (kinds == CAPTION) | (kinds == TOPIC)
    header = kinds == HEADER
    cell = kinds == CELL

    vis = meta[:, None] | meta[None, :]
    vis |= header[:, None] & header[None, :]
    same_col = cols[:, None] == cols[None, :]
    same_row = rows[:, None] == rows[None, :]
    hdr_cell = (header[:, None] & cell[None, :]) | (cell[:, None] & header[None, :])
    vis |= hdr_cell & same_col
    vis |= (cell[:, None] & cell[None, :]) & (same_row | same_col)
    out = vis.astype(np.uint8)
    np.fill_diagonal(out, 1)
    return out


def mask_cell(seq: Sequence, index: int, mask_entity: bool, mask_mention: bool, replace_entity: int | None = None) -> None:
    """Apply one masking action in place to element `index` of a cloned sequence."""
    el = seq.elements[index]
    if replace_entity is not None:
        el.entity_id = int(replace_entity)
    elif mask_entity:
        el.entity_id = MASK_ID
    if mask_mention:
        el.mention_ids = np.array([MASK_ID], dtype=np.int64)
