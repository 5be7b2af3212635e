"""Structure-aware transformer encoder over linearized tables.

Token inputs sum word, segment, and position embeddings. Entity inputs fuse
the entity embedding with the mean word embedding of the cell mention through
a learned affine map, then add a segment embedding; entities carry no position
term. Blocks are post-norm residual transformer layers whose attention weights
are hard-masked by the table visibility matrix: invisible pairs get exactly
zero weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import numeric as nm
from .encoding import Sequence, build_visibility
from .errors import ConfigError, UnknownId

__all__ = [
    "EncoderConfig",
    "Model",
    "init_model",
    "init_entity_embeddings",
    "trunc_normal",
    "embed_sequence",
    "transformer_block",
    "encode",
    "EncodeResult",
]


@dataclass
class EncoderConfig:
    n_blocks: int = 4
    d_model: int = 312
    n_heads: int = 12
    d_intermediate: int = 1200
    max_len: int = 256
    n_tokens: int = 0
    n_entities: int = 0
    n_token_types: int = 2
    n_entity_types: int = 3
    ln_eps: float = 1e-12

    def validate(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.n_heads}")
        if min(self.n_blocks, self.d_model, self.n_heads, self.d_intermediate, self.max_len) <= 0:
            raise ConfigError("encoder dimensions must be positive")
        if self.n_tokens <= 0 or self.n_entities <= 0:
            raise ConfigError("vocabulary sizes must be set before building a model")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class Model:
    cfg: EncoderConfig
    weights: dict[str, nm.Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> nm.Tensor:
        return self.weights[name]

    def params(self) -> list[nm.Tensor]:
        return [t for t in self.weights.values() if t.requires_grad]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.weights.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.weights.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            if arrays[name].shape != t.data.shape:
                raise ConfigError(f"tensor {name!r} shape {arrays[name].shape} != {t.data.shape}")
            t.data[...] = arrays[name]

    @property
    def dtype(self):
        return self.weights["word_emb"].data.dtype


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal draw renormalized to two standard deviations, then scaled."""
    x = rng.standard_normal(shape)
    while True:
        bad = np.abs(x) > 2.0
        if not bad.any():
            break
        x[bad] = rng.standard_normal(int(bad.sum()))
    return (x * std).astype(dtype)


def init_model(cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> Model:
    cfg.validate()
    d, di = cfg.d_model, cfg.d_intermediate
    w: dict[str, nm.Tensor] = {}

    def p(name: str, arr: np.ndarray) -> None:
        w[name] = nm.Tensor(arr, requires_grad=True, name=name)

    p("word_emb", trunc_normal(rng, (cfg.n_tokens, d), dtype=dtype))
    p("pos_emb", trunc_normal(rng, (cfg.max_len, d), dtype=dtype))
    p("tok_type_emb", trunc_normal(rng, (cfg.n_token_types, d), dtype=dtype))
    p("ent_emb", trunc_normal(rng, (cfg.n_entities, d), dtype=dtype))
    p("ent_type_emb", trunc_normal(rng, (cfg.n_entity_types, d), dtype=dtype))
    p("fuse_W", trunc_normal(rng, (2 * d, d), dtype=dtype))
    p("fuse_b", np.zeros(d, dtype=dtype))
    for i in range(cfg.n_blocks):
        pre = f"block{i}."
        for side in ("q", "k", "v", "o"):
            p(pre + f"W{side}", trunc_normal(rng, (d, d), dtype=dtype))
            p(pre + f"b{side}", np.zeros(d, dtype=dtype))
        p(pre + "ln1_g", np.ones(d, dtype=dtype))
        p(pre + "ln1_b", np.zeros(d, dtype=dtype))
        p(pre + "ffn_W1", trunc_normal(rng, (d, di), dtype=dtype))
        p(pre + "ffn_b1", np.zeros(di, dtype=dtype))
        p(pre + "ffn_W2", trunc_normal(rng, (di, d), dtype=dtype))
        p(pre + "ffn_b2", np.zeros(d, dtype=dtype))
        p(pre + "ln2_g", np.ones(d, dtype=dtype))
        p(pre + "ln2_b", np.zeros(d, dtype=dtype))
    p("mlm_W", trunc_normal(rng, (d, d), dtype=dtype))
    p("mlm_b", np.zeros(d, dtype=dtype))
    p("mer_W", trunc_normal(rng, (d, d), dtype=dtype))
    p("mer_b", np.zeros(d, dtype=dtype))
    return Model(cfg=replace(cfg), weights=w)


def init_entity_embeddings(model: Model, mentions: dict[int, np.ndarray]) -> None:
    """Seed entity rows with the mean word embedding of a canonical mention.

    Reserved rows (pad/mask/unk) keep their random initialization so the
    masked-entity embedding stays a separate learned vector.
    """
    word = model["word_emb"].data
    ent = model["ent_emb"].data
    for eid, token_ids in mentions.items():
        if eid < 3 or len(token_ids) == 0:
            continue
        ent[eid] = word[np.asarray(token_ids)].mean(axis=0)


def affine(x: nm.Tensor, w: nm.Tensor, b: nm.Tensor) -> nm.Tensor:
    return nm.add(nm.matmul(x, w), b)


def _check_ids(ids: np.ndarray, bound: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        raise UnknownId(f"{what} id out of range [0, {bound})")


def embed_sequence(seq: Sequence, model: Model) -> nm.Tensor:
    """Initial (n, d_model) representation of a linearized table."""
    cfg = model.cfg
    n = len(seq)
    dtype = model.dtype

    tok_idx, ent_idx = [], []
    tok_ids, tok_types, tok_pos = [], [], []
    ent_ids, ent_types = [], []
    mention_ids, mention_slices = [], []
    for i, el in enumerate(seq.elements):
        if el.is_entity:
            ent_idx.append(i)
            ent_ids.append(el.entity_id)
            ent_types.append(el.type_id)
            start = len(mention_ids)
            ment = el.mention_ids if el.mention_ids is not None and len(el.mention_ids) else np.array([2])
            mention_ids.extend(int(t) for t in ment)
            mention_slices.append((start, len(mention_ids)))
        else:
            tok_idx.append(i)
            tok_ids.append(el.token_id)
            tok_types.append(el.type_id)
            tok_pos.append(el.position)

    parts = []
    if tok_idx:
        ids = np.array(tok_ids, dtype=np.int64)
        pos = np.array(tok_pos, dtype=np.int64)
        types = np.array(tok_types, dtype=np.int64)
        _check_ids(ids, cfg.n_tokens, "token")
        _check_ids(pos, cfg.max_len, "position")
        _check_ids(types, cfg.n_token_types, "token type")
        x = nm.add(
            nm.add(nm.gather_rows(model["word_emb"], ids), nm.gather_rows(model["tok_type_emb"], types)),
            nm.gather_rows(model["pos_emb"], pos),
        )
        parts.append(nm.put_rows(x, np.array(tok_idx), n))
    if ent_idx:
        ids = np.array(ent_ids, dtype=np.int64)
        types = np.array(ent_types, dtype=np.int64)
        flat = np.array(mention_ids, dtype=np.int64)
        _check_ids(ids, cfg.n_entities, "entity")
        _check_ids(types, cfg.n_entity_types, "entity type")
        _check_ids(flat, cfg.n_tokens, "mention token")
        # constant row-averaging matrix: one row per entity, 1/len over its span
        avg = np.zeros((len(ent_idx), len(flat)), dtype=dtype)
        for r, (a, b) in enumerate(mention_slices):
            avg[r, a:b] = 1.0 / (b - a)
        mention_mean = nm.matmul(nm.Tensor(avg), nm.gather_rows(model["word_emb"], flat))
        fused = affine(
            nm.concat([nm.gather_rows(model["ent_emb"], ids), mention_mean], axis=1),
            model["fuse_W"],
            model["fuse_b"],
        )
        x = nm.add(fused, nm.gather_rows(model["ent_type_emb"], types))
        parts.append(nm.put_rows(x, np.array(ent_idx), n))
    if not parts:
        raise UnknownId("sequence has no elements to embed")
    return parts[0] if len(parts) == 1 else nm.add(parts[0], parts[1])


def _attention(h: nm.Tensor, mask: np.ndarray | None, model: Model, block: int) -> nm.Tensor:
    cfg = model.cfg
    n = h.data.shape[0]
    k, dh = cfg.n_heads, cfg.d_head
    pre = f"block{block}."
    q = affine(h, model[pre + "Wq"], model[pre + "bq"])
    kk = affine(h, model[pre + "Wk"], model[pre + "bk"])
    v = affine(h, model[pre + "Wv"], model[pre + "bv"])
    q3 = nm.transpose(nm.reshape(q, (n, k, dh)), (1, 0, 2))
    k3t = nm.transpose(nm.reshape(kk, (n, k, dh)), (1, 2, 0))
    v3 = nm.transpose(nm.reshape(v, (n, k, dh)), (1, 0, 2))
    scores = nm.scale(nm.matmul(q3, k3t), 1.0 / math.sqrt(dh))
    if mask is None:
        probs = nm.softmax(scores)
    else:
        probs = nm.masked_softmax(scores, mask)
    ctx = nm.reshape(nm.transpose(nm.matmul(probs, v3), (1, 0, 2)), (n, cfg.d_model))
    return affine(ctx, model[pre + "Wo"], model[pre + "bo"])


def transformer_block(h: nm.Tensor, mask: np.ndarray | None, model: Model, block: int) -> nm.Tensor:
    """One post-norm block. mask=None runs the plain unmasked reference path."""
    cfg = model.cfg
    pre = f"block{block}."
    a = _attention(h, mask, model, block)
    h1 = nm.layer_norm(nm.add(h, a), model[pre + "ln1_g"], model[pre + "ln1_b"], cfg.ln_eps)
    f = affine(nm.gelu(affine(h1, model[pre + "ffn_W1"], model[pre + "ffn_b1"])), model[pre + "ffn_W2"], model[pre + "ffn_b2"])
    return nm.layer_norm(nm.add(h1, f), model[pre + "ln2_g"], model[pre + "ln2_b"], cfg.ln_eps)


@dataclass
class EncodeResult:
    h: nm.Tensor
    seq: Sequence
    token_indices: np.ndarray
    entity_indices: np.ndarray


def encode(seq: Sequence, model: Model, use_visibility: bool = True, reference: bool = False) -> EncodeResult:
    """Run the full encoder over one table.

    use_visibility=False substitutes an all-ones matrix (structure ablation)
    but keeps the masked attention code path. reference=True instead runs the
    plain softmax path with no mask argument at all; it exists so tests can
    compare the two implementations.
    """
    h = embed_sequence(seq, model)
    if reference:
        mask = None
    elif use_visibility:
        mask = build_visibility(seq)
    else:
        mask = np.ones((len(seq), len(seq)), dtype=np.uint8)
    for i in range(model.cfg.n_blocks):
        h = transformer_block(h, mask, model, i)
    is_ent = np.array([e.is_entity for e in seq.elements])
    return EncodeResult(h=h, seq=seq, token_indices=np.flatnonzero(~is_ent), entity_indices=np.flatnonzero(is_ent))
