"""Pre-norm transformer encoder over role-tagged entity/relation token sequences.

There are no absolute positions: each token gets its vocabulary embedding
plus one of six learned role embeddings, so reordering qualifier pairs only
permutes the corresponding output rows.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Linear, ParamStore
from .tensor import Tensor


class Role(enum.IntEnum):
    HEAD = 0
    RELATION = 1
    MASK = 2
    ATTRIBUTE = 3
    VALUE = 4
    TAIL = 5


class VocabularyError(IndexError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 32
    layers: int = 2
    heads: int = 2
    ffn: int | None = None
    input_dropout: float = 0.0
    sublayer_dropout: float = 0.0
    role_embeddings: bool = True

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.d % self.heads:
            raise ValueError(f"d={self.d} must be divisible by heads={self.heads}")

    @property
    def ffn_width(self) -> int:
        return self.ffn or 2 * self.d


@dataclass
class TokenSequence:
    """One input sequence.  Relation-role tokens (relation, attribute) index
    the relation table; every other role indexes the entity table."""

    tokens: list[int]
    roles: list[Role]
    overrides: dict[int, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.tokens) != len(self.roles):
            raise ValueError("tokens and roles differ in length")


def uses_relation_table(role) -> bool:
    return role in (Role.RELATION, Role.ATTRIBUTE)


@dataclass
class TokenBatch:
    """Padded batch: ``ids`` index the concatenated [entity; relation] table."""

    ids: np.ndarray
    roles: np.ndarray
    valid: np.ndarray
    override: Tensor | None = None
    override_pos: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.ids.shape


def make_batch(tokens: list[list[int]], roles: list[list[int]], n_entities: int, n_relations: int,
               override: Tensor | None = None, override_pos=None) -> TokenBatch:
    if not tokens:
        raise ValueError("empty batch")
    length = max(len(t) for t in tokens)
    if length == 0:
        raise ValueError("zero-length sequence")
    m = len(tokens)
    ids = np.zeros((m, length), dtype=np.int64)
    rl = np.zeros((m, length), dtype=np.int64)
    valid = np.zeros((m, length), dtype=bool)
    for i, (tok, rol) in enumerate(zip(tokens, roles)):
        if not tok:
            raise ValueError("zero-length sequence")
        for j, (t, r) in enumerate(zip(tok, rol)):
            rel = uses_relation_table(r)
            limit = n_relations if rel else n_entities
            if not 0 <= t < limit:
                table = "relation" if rel else "entity"
                raise VocabularyError(f"unknown {table} id {t} (vocabulary size {limit})")
            ids[i, j] = t + n_entities if rel else t
            rl[i, j] = int(r)
            valid[i, j] = True
    pos = None if override_pos is None else np.asarray(override_pos, dtype=np.int64)
    return TokenBatch(ids, rl, valid, override, pos)


class EncoderParams:
    def __init__(self, store: ParamStore, cfg: EncoderConfig, prefix: str):
        d = cfg.d
        self.cfg = cfg
        self.prefix = prefix
        self.role = store.uniform(f"{prefix}/role", (len(Role), d)) if cfg.role_embeddings else None
        self.blocks = []
        for i in range(cfg.layers):
            p = f"{prefix}/layer{i}"
            self.blocks.append({
                "ln1_g": store.ones(f"{p}/ln1/g", (d,)),
                "ln1_b": store.zeros(f"{p}/ln1/b", (d,)),
                "q": Linear(store, f"{p}/attn/q", d, d),
                "k": Linear(store, f"{p}/attn/k", d, d),
                "v": Linear(store, f"{p}/attn/v", d, d),
                "o": Linear(store, f"{p}/attn/o", d, d),
                "ln2_g": store.ones(f"{p}/ln2/g", (d,)),
                "ln2_b": store.zeros(f"{p}/ln2/b", (d,)),
                "ff1": Linear(store, f"{p}/ffn/fc1", d, cfg.ffn_width),
                "ff2": Linear(store, f"{p}/ffn/fc2", cfg.ffn_width, d),
            })
        self.lnf_g = store.ones(f"{prefix}/lnf/g", (d,))
        self.lnf_b = store.zeros(f"{prefix}/lnf/b", (d,))


def encode_batch(batch: TokenBatch, entity_table: Tensor, relation_table: Tensor, enc: EncoderParams,
                 train: bool = False, dropout_key: tuple[int, ...] = (0,)) -> Tensor:
    """Contextual embeddings of shape (batch, length, d)."""
    cfg = enc.cfg
    table = T.concat([entity_table, relation_table], axis=0)
    x = T.gather_rows(table, batch.ids)
    if batch.override is not None:
        sel = np.zeros(batch.ids.shape, dtype=bool)
        rows = np.nonzero(batch.override_pos >= 0)[0]
        sel[rows, batch.override_pos[rows]] = True
        x = T.where(sel[..., None], T.reshape(batch.override, (batch.ids.shape[0], 1, cfg.d)), x)
    if enc.role is not None:
        x = T.add(x, T.gather_rows(enc.role, batch.roles))
    x = T.dropout(x, cfg.input_dropout, (*dropout_key, 0), train)
    for i, blk in enumerate(enc.blocks):
        h = T.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
        h = T.multi_head_attention(
            h, blk["q"].weight, blk["k"].weight, blk["v"].weight, blk["o"].weight, cfg.heads,
            key_mask=batch.valid, bq=blk["q"].bias, bk=blk["k"].bias, bv=blk["v"].bias, bo=blk["o"].bias,
        )
        h = T.dropout(h, cfg.sublayer_dropout, (*dropout_key, 2 * i + 1), train)
        x = T.add(x, h)
        h = T.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        h = blk["ff2"](T.gelu(blk["ff1"](h)))
        h = T.dropout(h, cfg.sublayer_dropout, (*dropout_key, 2 * i + 2), train)
        x = T.add(x, h)
    return T.layer_norm(x, enc.lnf_g, enc.lnf_b)


def encode(seq: TokenSequence, entity_table: Tensor, relation_table: Tensor, enc: EncoderParams,
           train: bool = False, dropout_key: tuple[int, ...] = (0,)) -> Tensor:
    """Encode a single sequence; returns (length, d)."""
    if not seq.tokens:
        raise ValueError("zero-length sequence")
    override = pos = None
    if seq.overrides:
        if len(seq.overrides) != 1:
            raise ValueError("at most one overridden position is supported")
        (p, vec), = seq.overrides.items()
        if vec.shape[-1] != enc.cfg.d:
            raise ValueError(f"override has dimension {vec.shape[-1]}, expected {enc.cfg.d}")
        override, pos = T.reshape(vec, (1, enc.cfg.d)), [p]
    batch = make_batch([seq.tokens], [list(seq.roles)], entity_table.shape[0], relation_table.shape[0],
                       override, pos)
    out = encode_batch(batch, entity_table, relation_table, enc, train, dropout_key)
    return T.reshape(out, (len(seq.tokens), enc.cfg.d))
