"""Self-supervised pre-training over table sequences.

Two objectives run together. Masked token recovery selects caption and header
tokens (selection probability `mlm_ratio`); a selected token is replaced by
the mask token 80% of the time, by a random non-reserved token 10%, and kept
10%, and is always predicted over the full token vocabulary. Masked cell
recovery selects entity cells (probability `mer_ratio`); of the selected
cells 10% keep both the entity embedding and mention, 63% mask both, and 27%
keep the mention while the embedding side is masked, with one tenth of that
branch substituting a random entity embedding instead of the mask. Selected
cells are predicted over a per-table candidate set: the table's own entities,
entities co-occurring with them in the training corpus, and random negatives,
capped with golds always retained.

The optimized loss is the plain sum of negative log likelihoods over all
predicted positions, so table and batch losses add exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numeric as nm
from .corpus import MASK_ID, IndexedTable
from .encoder import EncoderConfig, Model, encode, init_entity_embeddings, init_model
from .encoding import CELL, Sequence, linearize, mask_cell

# cell masking actions
KEEP = 0
MASK_BOTH = 1
MASK_EMB = 2
RANDOM_EMB = 3

N_RESERVED_TOKENS = 4
N_RESERVED_ENTITIES = 3


@dataclass
class TokenMaskPlan:
    indices: np.ndarray      # element positions of selected tokens
    targets: np.ndarray      # original token ids
    replacements: np.ndarray # id to place at the position (may equal target)


@dataclass
class CellMaskPlan:
    indices: np.ndarray      # element positions of selected cells
    targets: np.ndarray      # original entity ids
    actions: np.ndarray


def sample_token_mask(rng: np.random.Generator, seq: Sequence, ratio: float, n_tokens: int) -> TokenMaskPlan:
    indices, targets, repl = [], [], []
    can_randomize = n_tokens > N_RESERVED_TOKENS
    for i, el in enumerate(seq.elements):
        if el.is_entity:
            continue
        if rng.random() >= ratio:
            continue
        branch = rng.random()
        if branch < 0.8 or not can_randomize and branch < 0.9:
            new_id = MASK_ID
        elif branch < 0.9:
            new_id = int(rng.integers(N_RESERVED_TOKENS, n_tokens))
        else:
            new_id = el.token_id
        indices.append(i)
        targets.append(el.token_id)
        repl.append(new_id)
    return TokenMaskPlan(
        indices=np.array(indices, dtype=np.int64),
        targets=np.array(targets, dtype=np.int64),
        replacements=np.array(repl, dtype=np.int64),
    )


def sample_cell_mask(rng: np.random.Generator, seq: Sequence, ratio: float, n_entities: int) -> CellMaskPlan:
    indices, targets, actions = [], [], []
    can_randomize = n_entities > N_RESERVED_ENTITIES
    for i, el in enumerate(seq.elements):
        if el.kind != CELL:
            continue
        if rng.random() >= ratio:
            continue
        branch = rng.random()
        if branch < 0.10:
            action = KEEP
        elif branch < 0.73:
            action = MASK_BOTH
        else:
            sub = rng.random()
            action = RANDOM_EMB if sub < 0.10 and can_randomize else MASK_EMB
        indices.append(i)
        targets.append(el.entity_id)
        actions.append(action)
    return CellMaskPlan(
        indices=np.array(indices, dtype=np.int64),
        targets=np.array(targets, dtype=np.int64),
        actions=np.array(actions, dtype=np.int64),
    )


def apply_masks(
    seq: Sequence,
    token_plan: TokenMaskPlan | None,
    cell_plan: CellMaskPlan | None,
    rng: np.random.Generator | None = None,
    n_entities: int = 0,
) -> Sequence:
    """Produce the corrupted clone the encoder actually sees."""
    out = seq.clone()
    if token_plan is not None:
        for i, rep in zip(token_plan.indices, token_plan.replacements):
            out.elements[int(i)].token_id = int(rep)
    if cell_plan is not None:
        for i, action in zip(cell_plan.indices, cell_plan.actions):
            i = int(i)
            if action == KEEP:
                continue
            if action == MASK_BOTH:
                mask_cell(out, i, mask_entity=True, mask_mention=True)
            elif action == MASK_EMB:
                mask_cell(out, i, mask_entity=True, mask_mention=False)
            else:  # RANDOM_EMB
                rand_id = int(rng.integers(N_RESERVED_ENTITIES, n_entities))
                mask_cell(out, i, mask_entity=False, mask_mention=False, replace_entity=rand_id)
    return out


# ---------------------------------------------------------------------------
# candidate sets


def build_candidates(
    table_entities: np.ndarray,
    golds: np.ndarray,
    cooccur: dict[int, set[int]],
    n_entities: int,
    cap: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sorted candidate ids for one table's masked cells.

    Golds always survive the cap. The rest is the table's entities, their
    co-occurring entities, and random non-reserved negatives drawn to fill up
    to the cap when the corpus statistics come up short.
    """
    pool: set[int] = set(int(e) for e in table_entities)
    for e in table_entities:
        pool.update(cooccur.get(int(e), ()))
    gold_set = set(int(g) for g in golds)
    pool.update(gold_set)
    pool.difference_update(range(N_RESERVED_ENTITIES))

    n_free = max(0, n_entities - N_RESERVED_ENTITIES)
    want = min(cap, n_free)
    if len(pool) < want:
        # top up with random negatives outside the pool
        missing = want - len(pool)
        universe = np.arange(N_RESERVED_ENTITIES, n_entities, dtype=np.int64)
        outside = np.array(sorted(set(universe.tolist()) - pool), dtype=np.int64)
        take = rng.permutation(len(outside))[:missing]
        pool.update(int(outside[t]) for t in take)
    elif len(pool) > cap:
        rest = np.array(sorted(pool - gold_set), dtype=np.int64)
        keep = rng.permutation(len(rest))[: max(0, cap - len(gold_set))]
        pool = gold_set | {int(rest[k]) for k in keep}
    return np.array(sorted(pool), dtype=np.int64)


# ---------------------------------------------------------------------------
# prediction heads


def token_logits(model: Model, h: nm.Tensor, positions: np.ndarray) -> nm.Tensor:
    """Scores over the full token vocabulary for the given sequence slots."""
    sel = nm.gather_rows(h, positions)
    proj = nm.add(nm.matmul(sel, model["mlm_W"]), model["mlm_b"])
    return nm.matmul(proj, nm.transpose(model["word_emb"], (1, 0)))


def entity_logits(model: Model, h: nm.Tensor, positions: np.ndarray, candidates: np.ndarray) -> nm.Tensor:
    """Scores over a candidate id array for the given sequence slots."""
    sel = nm.gather_rows(h, positions)
    proj = nm.add(nm.matmul(sel, model["mer_W"]), model["mer_b"])
    cand = nm.gather_rows(model["ent_emb"], candidates)
    return nm.matmul(proj, nm.transpose(cand, (1, 0)))


@dataclass
class TableLossStats:
    n_tokens: int = 0
    n_cells: int = 0
    token_correct: int = 0
    cell_correct: int = 0


def table_loss(
    model: Model,
    seq: Sequence,
    token_plan: TokenMaskPlan,
    cell_plan: CellMaskPlan,
    candidates: np.ndarray,
    use_visibility: bool,
) -> tuple[nm.Tensor | None, TableLossStats]:
    """Summed recovery loss for one corrupted table."""
    stats = TableLossStats()
    enc = encode(seq, model, use_visibility=use_visibility)
    terms = []
    if len(token_plan.indices):
        logits = token_logits(model, enc.h, token_plan.indices)
        terms.append(nm.cross_entropy_sum(logits, token_plan.targets))
        stats.n_tokens = len(token_plan.indices)
        stats.token_correct = int((logits.data.argmax(axis=1) == token_plan.targets).sum())
    if len(cell_plan.indices):
        gold_pos = np.searchsorted(candidates, cell_plan.targets)
        logits = entity_logits(model, enc.h, cell_plan.indices, candidates)
        terms.append(nm.cross_entropy_sum(logits, gold_pos))
        stats.n_cells = len(cell_plan.indices)
        stats.cell_correct = int((logits.data.argmax(axis=1) == gold_pos).sum())
    if not terms:
        return None, stats
    return terms[0] if len(terms) == 1 else nm.add(terms[0], terms[1]), stats


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSettings:
    mlm_ratio: float = 0.2
    mer_ratio: float = 0.6
    lr0: float = 1e-4
    epochs: int = 80
    batch_size: int = 8
    candidate_cap: int = 256
    use_visibility: bool = True
    seed: int = 13


@dataclass
class History:
    step_losses: list[float] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)


def canonical_mentions(tables: list[IndexedTable]) -> dict[int, np.ndarray]:
    """Most frequent mention token sequence per entity id, ties broken lexically."""
    counts: dict[int, dict[tuple, int]] = {}
    for t in tables:
        seen = [(c.entity_id, tuple(int(x) for x in c.mention_ids)) for c in t.cells]
        if t.topic is not None:
            seen.append((t.topic[0], tuple(int(x) for x in t.topic[1])))
        for eid, ment in seen:
            if ment:
                counts.setdefault(eid, {})
                counts[eid][ment] = counts[eid].get(ment, 0) + 1
    out = {}
    for eid, ments in counts.items():
        best = min(ments.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        out[eid] = np.array(best, dtype=np.int64)
    return out


def fit(
    tables: list[IndexedTable],
    encoder_cfg: EncoderConfig,
    settings: TrainSettings,
    cooccur: dict[int, set[int]],
    valid_tables: list[IndexedTable] | None = None,
    max_steps: int | None = None,
    model: Model | None = None,
    epoch_callback=None,
    dtype=np.float32,
) -> tuple[Model, History]:
    """Pre-train a model. Deterministic for a fixed seed, backend, and inputs."""
    rng = np.random.default_rng(settings.seed)
    if model is None:
        model = init_model(encoder_cfg, rng, dtype=dtype)
        init_entity_embeddings(model, canonical_mentions(tables))
    seqs = [linearize(t, encoder_cfg.max_len) for t in tables]
    ent_sets = [t.entity_ids() for t in tables]

    n_batches = max(1, (len(seqs) + settings.batch_size - 1) // settings.batch_size)
    total_steps = settings.epochs * n_batches
    opt = nm.Adam(model.params(), lr0=settings.lr0, total_steps=total_steps)
    history = History()

    step = 0
    for epoch in range(settings.epochs):
        order = rng.permutation(len(seqs))
        ep_loss = 0.0
        ep_stats = TableLossStats()
        for b in range(0, len(order), settings.batch_size):
            if max_steps is not None and step >= max_steps:
                break
            batch = order[b : b + settings.batch_size]
            opt.zero_grad()
            total = None
            for idx in batch:
                seq0 = seqs[idx]
                tok_plan = sample_token_mask(rng, seq0, settings.mlm_ratio, encoder_cfg.n_tokens)
                cell_plan = sample_cell_mask(rng, seq0, settings.mer_ratio, encoder_cfg.n_entities)
                if not len(tok_plan.indices) and not len(cell_plan.indices):
                    continue
                corrupted = apply_masks(seq0, tok_plan, cell_plan, rng, encoder_cfg.n_entities)
                cands = build_candidates(
                    ent_sets[idx], cell_plan.targets, cooccur, encoder_cfg.n_entities, settings.candidate_cap, rng
                )
                loss, stats = table_loss(model, corrupted, tok_plan, cell_plan, cands, settings.use_visibility)
                if loss is None:
                    continue
                total = loss if total is None else nm.add(total, loss)
                ep_stats.n_tokens += stats.n_tokens
                ep_stats.n_cells += stats.n_cells
                ep_stats.token_correct += stats.token_correct
                ep_stats.cell_correct += stats.cell_correct
            if total is None:
                continue
            total.backward()
            opt.step()
            step += 1
            step_loss = float(total.data)
            ep_loss += step_loss
            history.step_losses.append(step_loss)
        n_pred = ep_stats.n_tokens + ep_stats.n_cells
        record = {
            "epoch": epoch,
            "loss": ep_loss / max(1, n_pred),
            "mlm_acc": ep_stats.token_correct / max(1, ep_stats.n_tokens),
            "mer_acc": ep_stats.cell_correct / max(1, ep_stats.n_cells),
            "oep_acc": None,
        }
        if valid_tables is not None:
            record["oep_acc"] = masked_recovery_accuracy(
                model,
                valid_tables,
                cooccur,
                cap=settings.candidate_cap,
                seed=settings.seed,
                use_visibility=settings.use_visibility,
                only_objects=True,
            )
        history.epochs.append(record)
        if epoch_callback is not None and epoch_callback(record):
            break
        if max_steps is not None and step >= max_steps:
            break
    return model, history


# ---------------------------------------------------------------------------
# masked-recovery evaluation


def masked_recovery_accuracy(
    model: Model,
    tables: list[IndexedTable],
    cooccur: dict[int, set[int]],
    cap: int,
    seed: int,
    use_visibility: bool = True,
    only_objects: bool = False,
) -> float:
    """Fraction of cells recovered at rank one, masking one cell at a time.

    The masked cell loses both its entity embedding and its mention; the rest
    of the table stays intact. With only_objects=True, subject-column cells
    are skipped and the measure is object-cell recovery.
    """
    rng = np.random.default_rng(seed)
    correct = 0
    total = 0
    for t in tables:
        seq = linearize(t, model.cfg.max_len)
        cell_positions = [
            i
            for i, el in enumerate(seq.elements)
            if el.kind == CELL and not (only_objects and el.col == t.subject_col)
        ]
        if not cell_positions:
            continue
        golds = np.array([seq.elements[i].entity_id for i in cell_positions], dtype=np.int64)
        cands = build_candidates(t.entity_ids(), golds, cooccur, model.cfg.n_entities, cap, rng)
        for pos, gold in zip(cell_positions, golds):
            masked = seq.clone()
            mask_cell(masked, pos, mask_entity=True, mask_mention=True)
            enc = encode(masked, model, use_visibility=use_visibility)
            logits = entity_logits(model, enc.h, np.array([pos]), cands).data[0]
            # ties break toward the smaller entity id; argmax already does
            # that because candidates are sorted ascending
            pred = cands[int(np.argmax(logits))]
            correct += int(pred == gold)
            total += 1
    return correct / max(1, total)
