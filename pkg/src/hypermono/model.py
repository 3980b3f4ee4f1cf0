"""HyperMono network: neighborhood aggregators and the two-stage missing-entity predictor.

Every forward pass is batched over queries.  For a tail query ``(h, r, ?, Q)``
the *known* entity is ``h`` and the *answer* is the tail; head queries are the
mirror image (mask in the head slot, neighbors of the tail where it appears
as a tail).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import cone as C
from . import tensor as T
from .hkg import MASK_ID, Direction, HyperFact, HyperGraph, QualifierPair, Query, neighbors
from .layers import ParamStore
from .seqenc import EncoderConfig, EncoderParams, Role, encode_batch, make_batch
from .tensor import Tensor


class ConfigError(ValueError):
    pass


STAGES = ("coarse", "fine", "combined")
LOSS_NAMES = ("L_triple_h", "L_hyper_h", "L_triple_t", "L_hyper_t")


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    layers: int = 2
    heads: int = 2
    ffn: int | None = None
    input_dropout: float = 0.0
    sublayer_dropout: float = 0.0
    gamma: float = 4.0
    neighbors: int = 3
    max_qualifiers: int = 6
    smoothing: float = 0.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    init_range: float = 0.3
    encoder_sharing: str = "paired"
    pool_mode: str = "elementwise"
    strict_containment: bool = False
    # component switches (False = ablated)
    cna: bool = True
    fna: bool = True
    lei: bool = True
    gei: bool = True
    csb: bool = True

    def __post_init__(self):
        if not (self.cna or self.fna):
            raise ConfigError("both the coarse (CNA+TP) and fine (FNA+QMP) branches are ablated")
        if not (self.lei or self.gei):
            raise ConfigError("pooling needs LEI or GEI")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.layers < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"need layers >= 1 and d={self.d} divisible by heads={self.heads}")
        if self.neighbors < 1 or self.max_qualifiers < 0:
            raise ConfigError("neighbor cap must be >= 1 and qualifier cap >= 0")
        if self.encoder_sharing not in ("paired", "shared", "separate"):
            raise ConfigError(f"unknown encoder_sharing {self.encoder_sharing!r}")
        if self.pool_mode not in ("elementwise", "scalar"):
            raise ConfigError(f"unknown pool_mode {self.pool_mode!r}")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing must lie in [0, 1)")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.layers, self.heads, self.ffn, self.input_dropout,
                             self.sublayer_dropout)


# ---------------------------------------------------------------- scoring pieces


def lei_scores(mask_vectors: Tensor, entity_matrix: Tensor) -> Tensor:
    """Per-neighbor entity scores: (..., n, d) x (N, d)^T -> (..., n, N)."""
    return T.matmul(mask_vectors, T.transpose(entity_matrix))


def gei_score(lei: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean of the per-neighbor score vectors along axis -2."""
    if lei.shape[-2] == 0:
        raise ValueError("gei_score needs at least one score vector")
    if mask is None:
        return T.mean(lei, axis=-2)
    m = np.asarray(mask, float)[..., None]
    count = np.maximum(m.sum(axis=-2), 1.0)
    return T.div(T.sum_(T.mul(lei, m), axis=-2), count)


def pool_predictions(vectors: Tensor, gamma: float, mask: np.ndarray | None = None,
                     mode: str = "elementwise") -> Tensor:
    """Exponentially weighted pooling of candidate score vectors (..., n, N) -> (..., N).

    ``elementwise``: each entity column gets its own softmax(gamma * P) weights
    across the n candidates.  ``scalar``: one weight per candidate from its
    mean score.  ``mask`` (..., n) drops candidates.
    """
    if vectors.shape[-2] == 0:
        raise ValueError("pool_predictions needs at least one vector")
    if mode == "elementwise":
        pt = T.transpose(vectors, tuple(range(vectors.ndim - 2)) + (vectors.ndim - 1, vectors.ndim - 2))
        m = None if mask is None else np.asarray(mask, bool)[..., None, :]
        w = T.softmax(T.mul(pt, gamma), mask=m)
        return T.sum_(T.mul(w, pt), axis=-1)
    if mode == "scalar":
        s = T.mean(vectors, axis=-1)
        w = T.softmax(T.mul(s, gamma), mask=mask)
        return T.sum_(T.mul(T.reshape(w, w.shape + (1,)), vectors), axis=-2)
    raise ValueError(f"unknown pool mode {mode!r}")


def head_loss(logits: Tensor, gold, smoothing: float = 0.0) -> Tensor:
    """Label-smoothed cross-entropy of score vector(s) against the gold entity."""
    gold = np.asarray(gold, dtype=np.int64)
    n = logits.shape[-1]
    if gold.size and (gold.min() < 0 or gold.max() >= n):
        raise ValueError(f"gold entity out of range for {n} scores")
    return T.cross_entropy(logits, gold, smoothing)


@dataclass
class ForwardOutput:
    agg_triple: Tensor | None = None      # N^e per query
    agg_hyper: Tensor | None = None       # M^e per query
    pooled_triple: Tensor | None = None   # P^e
    pooled_hyper: Tensor | None = None    # Q^e
    coarse_logits: Tensor | None = None   # TP scores over entities
    fine_logits: Tensor | None = None     # QMP scores over entities
    fine_cone: C.Cone | None = None
    losses: dict[str, Tensor] = field(default_factory=dict)
    loss: Tensor | None = None


def _stable_key(q: Query) -> int:
    flat = [q.known, q.relation, 0 if q.direction is Direction.TAIL else 1]
    for a, v in q.qualifiers:
        flat += [a, v]
    return zlib.crc32(np.asarray(flat, dtype=np.int64).tobytes())


class HyperMono:
    def __init__(self, cfg: ModelConfig, n_entities: int, n_relations: int, seed: int = 0):
        self.cfg = cfg
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.seed = seed
        store = ParamStore(seed, cfg.init_range)
        self.ent = store.uniform("model/ent", (n_entities, cfg.d))
        self.rel = store.uniform("model/rel", (n_relations, cfg.d))
        ecfg = cfg.encoder_config()
        if cfg.encoder_sharing == "paired":
            coarse, fine = EncoderParams(store, ecfg, "enc/coarse"), EncoderParams(store, ecfg, "enc/fine")
            self.enc = {"cna": coarse, "tp": coarse, "fna": fine, "qmp": fine}
        elif cfg.encoder_sharing == "shared":
            shared = EncoderParams(store, ecfg, "enc/shared")
            self.enc = dict.fromkeys(("cna", "tp", "fna", "qmp"), shared)
        else:
            self.enc = {k: EncoderParams(store, ecfg, f"enc/{k}") for k in ("cna", "tp", "fna", "qmp")}
        self.cone = C.ConeParams(store, cfg.d, cfg.lambda1, cfg.lambda2, cfg.strict_containment)
        self.params: dict[str, Tensor] = store.params

    # ------------------------------------------------------------ state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in state:
                raise KeyError(f"checkpoint lacks parameter {k!r}")
            if state[k].shape != p.shape:
                raise ValueError(f"parameter {k!r}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data[...] = state[k]

    def with_config(self, **changes) -> "HyperMono":
        """Same weights under a modified configuration (shapes must agree)."""
        other = HyperMono(replace(self.cfg, **changes), self.n_entities, self.n_relations, self.seed)
        other.load_state_dict(self.state_dict())
        return other

    # ------------------------------------------------------------ helpers

    def _truncate(self, quals: tuple[QualifierPair, ...], key: list[int]) -> tuple[QualifierPair, ...]:
        cap = self.cfg.max_qualifiers
        if len(quals) <= cap:
            return quals
        rng = np.random.default_rng(key)
        keep = np.sort(rng.choice(len(quals), size=cap, replace=False))
        return tuple(quals[i] for i in keep)

    def _neighbor_seqs(self, q: Query, graph: HyperGraph, mode: str, seed: int, epoch: int):
        side = "head" if q.direction is Direction.TAIL else "tail"
        found = neighbors(graph, q.known, mode, self.cfg.neighbors, seed, side)
        seqs = []
        for j, nf in enumerate(found):
            if side == "head":
                toks = [MASK_ID, nf.relation, nf.tail]
                roles = [Role.MASK, Role.RELATION, Role.TAIL]
                mpos = 0
            else:
                toks = [nf.head, nf.relation, MASK_ID]
                roles = [Role.HEAD, Role.RELATION, Role.MASK]
                mpos = 2
            if mode == "hyper":
                fk = zlib.crc32(np.asarray(nf.triple, dtype=np.int64).tobytes())
                for a, v in self._truncate(tuple(dict.fromkeys(nf.qualifiers)), [self.seed, epoch, fk, j]):
                    toks += [a, v]
                    roles += [Role.ATTRIBUTE, Role.VALUE]
            seqs.append((toks, roles, mpos))
        return seqs

    def neighbor_mask_embed(self, queries: list[Query], graph: HyperGraph, mode: str, *, train=False,
                            seed: int = 0, epoch: int = 0, step: int = 0):
        """Encode masked neighbor sequences; returns (mask vectors (B,k,d), valid (B,k), aggregate (B,d)).

        Queries whose known entity has no neighbors fall back to its raw
        embedding row for the aggregate.
        """
        cfg = self.cfg
        k, d = cfg.neighbors, cfg.d
        per_item = [self._neighbor_seqs(q, graph, mode, seed, epoch) for q in queries]
        b = len(queries)
        counts = np.array([len(s) for s in per_item])
        valid = np.arange(k)[None, :] < counts[:, None]
        flat = [s for item in per_item for s in item]
        if flat:
            enc = self.enc["cna" if mode == "triple" else "fna"]
            batch = make_batch([s[0] for s in flat], [s[1] for s in flat], self.n_entities, self.n_relations)
            out = encode_batch(batch, self.ent, self.rel, enc, train,
                               (self.seed, step, 1 if mode == "triple" else 2))
            rows = T.getitem(out, (np.arange(len(flat)), np.array([s[2] for s in flat])))
            table = T.concat([rows, np.zeros((1, d))], axis=0)
            index = np.full((b, k), len(flat), dtype=np.int64)
            index[valid] = np.arange(len(flat))
            padded = T.gather_rows(table, index)
        else:
            padded = Tensor(np.zeros((b, k, d)))
        count = np.maximum(counts, 1)[:, None].astype(float)
        mean_vec = T.div(T.sum_(padded, axis=1), count)
        raw = T.gather_rows(self.ent, np.array([q.known for q in queries]))
        agg = T.where((counts > 0)[:, None], mean_vec, raw)
        return padded, valid, agg

    def _aggregate_branch(self, queries, golds_known, graph, mode, train, seed, epoch, step):
        cfg = self.cfg
        padded, valid, agg = self.neighbor_mask_embed(queries, graph, mode, train=train, seed=seed,
                                                      epoch=epoch, step=step)
        has = valid.any(axis=1)
        lei = lei_scores(padded, self.ent)
        gei = gei_score(lei, valid)
        cands = T.concat([lei, T.reshape(gei, (gei.shape[0], 1, gei.shape[1]))], axis=1)
        cmask = np.concatenate([valid & cfg.lei, (has & cfg.gei)[:, None]], axis=1)
        cmask[~has, -1] = True  # empty neighborhoods pool a zero vector; their loss is masked out
        pooled = pool_predictions(cands, cfg.gamma, cmask, cfg.pool_mode)
        loss = None
        if golds_known is not None:
            loss = T.mul(head_loss(pooled, golds_known, cfg.smoothing), has.astype(float))
        return agg, pooled, loss

    def tp_forward(self, queries: list[Query], agg: Tensor | None, *, train=False, step: int = 0) -> Tensor:
        """Coarse scores from ``{known, r, [mask]}``; qualifiers are never read."""
        toks, roles, pos, mpos = [], [], [], []
        for q in queries:
            if q.direction is Direction.TAIL:
                toks.append([q.known, q.relation, MASK_ID])
                roles.append([Role.HEAD, Role.RELATION, Role.MASK])
                pos.append(0)
                mpos.append(2)
            else:
                toks.append([MASK_ID, q.relation, q.known])
                roles.append([Role.MASK, Role.RELATION, Role.TAIL])
                pos.append(2)
                mpos.append(0)
        batch = make_batch(toks, roles, self.n_entities, self.n_relations, agg, pos if agg is not None else None)
        out = encode_batch(batch, self.ent, self.rel, self.enc["tp"], train, (self.seed, step, 3))
        f_mask = T.getitem(out, (np.arange(len(queries)), np.array(mpos)))
        return T.matmul(f_mask, T.transpose(self.ent))

    def qmp_forward(self, queries: list[Query], agg: Tensor | None, *, train=False, step: int = 0,
                    epoch: int = 0) -> tuple[Tensor, C.Cone]:
        """Fine scores: encode with qualifiers, build cones, shrink per qualifier, intersect, score."""
        cfg = self.cfg
        toks, roles, pos, nq = [], [], [], []
        for q in queries:
            quals = self._truncate(q.qualifiers, [self.seed, epoch, _stable_key(q)])
            if q.direction is Direction.TAIL:
                t = [q.known, q.relation, MASK_ID]
                r = [Role.HEAD, Role.RELATION, Role.MASK]
                pos.append(0)
            else:
                t = [MASK_ID, q.relation, q.known]
                r = [Role.MASK, Role.RELATION, Role.TAIL]
                pos.append(2)
            for a, v in quals:
                t += [a, v]
                r += [Role.ATTRIBUTE, Role.VALUE]
            toks.append(t)
            roles.append(r)
            nq.append(len(quals))
        b = len(queries)
        batch = make_batch(toks, roles, self.n_entities, self.n_relations, agg, pos if agg is not None else None)
        s = encode_batch(batch, self.ent, self.rel, self.enc["qmp"], train, (self.seed, step, 4))
        rows = np.arange(b)
        e_known = T.getitem(s, (rows, np.array(pos)))
        e_rel = T.getitem(s, (slice(None), 1))
        c_kr = C.project(C.head_cone(e_known, self.cone), C.relation_cone(e_rel, self.cone), self.cone)
        c_kr = C.Cone(T.reshape(c_kr.axis, (b, 1, cfg.d)), T.reshape(c_kr.aperture, (b, 1, cfg.d)))
        nq = np.array(nq)
        smax = int(nq.max()) if b else 0
        if cfg.csb and smax > 0:
            j = np.arange(smax)
            e_a = T.getitem(s, (slice(None), 3 + 2 * j))
            e_v = T.getitem(s, (slice(None), 4 + 2 * j))
            shrunk = C.shrink(c_kr, T.reshape(e_rel, (b, 1, cfg.d)), e_a, e_v, self.cone)
            real = j[None, :] < nq[:, None]
            sel = real[..., None]
            members = C.Cone(T.where(sel, shrunk.axis, c_kr.axis), T.where(sel, shrunk.aperture, c_kr.aperture))
            mask = real | ((j[None, :] == 0) & (nq[:, None] == 0))
        else:
            members, mask = c_kr, None
        answer_cone = C.intersect(members, self.cone, mask)
        return C.cone_to_logits(answer_cone, self.ent, self.cone), answer_cone

    # ------------------------------------------------------------ public passes

    def forward(self, queries: list[Query], graph: HyperGraph, golds=None, *, train=False,
                neighbor_seed: int = 0, epoch: int = 0, step: int = 0) -> ForwardOutput:
        """Run every enabled branch; with ``golds`` also the four per-query losses."""
        cfg = self.cfg
        out = ForwardOutput()
        golds = None if golds is None else np.asarray(golds, dtype=np.int64)
        known = None if golds is None else np.array([q.known for q in queries])
        zero = Tensor(np.zeros(len(queries)))
        if cfg.cna:
            out.agg_triple, out.pooled_triple, l_known = self._aggregate_branch(
                queries, known, graph, "triple", train, neighbor_seed, epoch, step)
            out.coarse_logits = self.tp_forward(queries, out.agg_triple, train=train, step=step)
            if golds is not None:
                out.losses["triple_known"] = l_known
                out.losses["triple_answer"] = head_loss(out.coarse_logits, golds, cfg.smoothing)
        if cfg.fna:
            out.agg_hyper, out.pooled_hyper, l_known = self._aggregate_branch(
                queries, known, graph, "hyper", train, neighbor_seed, epoch, step)
            out.fine_logits, out.fine_cone = self.qmp_forward(queries, out.agg_hyper, train=train,
                                                              step=step, epoch=epoch)
            if golds is not None:
                out.losses["hyper_known"] = l_known
                out.losses["hyper_answer"] = head_loss(out.fine_logits, golds, cfg.smoothing)
        if golds is not None:
            for name in ("triple_known", "triple_answer", "hyper_known", "hyper_answer"):
                out.losses.setdefault(name, zero)
            total = out.losses["triple_known"]
            for name in ("triple_answer", "hyper_known", "hyper_answer"):
                total = T.add(total, out.losses[name])
            out.loss = T.sum_(total)
        return out

    def joint_forward(self, facts: list[HyperFact], graph: HyperGraph, *, train=False,
                      neighbor_seed: int = 0, epoch: int = 0, step: int = 0,
                      directions=(Direction.TAIL, Direction.HEAD)):
        """Sum of the four branch losses per fact, averaged over the facts.

        Returns the forward output and a dict of per-name loss totals keyed by
        the entity the loss supervises (``_h`` for the head, ``_t`` for the tail).
        """
        queries, golds = [], []
        for f in facts:
            for d in directions:
                q = Query.from_fact(f, d)
                queries.append(q)
                golds.append(q.gold(f))
        out = self.forward(queries, graph, golds, train=train, neighbor_seed=neighbor_seed,
                           epoch=epoch, step=step)
        out.loss = T.div(out.loss, float(len(facts)))
        is_tail = np.array([q.direction is Direction.TAIL for q in queries])
        parts = {}
        for branch in ("triple", "hyper"):
            k = out.losses[f"{branch}_known"].data
            a = out.losses[f"{branch}_answer"].data
            parts[f"L_{branch}_h"] = float((k[is_tail].sum() + a[~is_tail].sum()) / len(facts))
            parts[f"L_{branch}_t"] = float((a[is_tail].sum() + k[~is_tail].sum()) / len(facts))
        return out, parts

    def predict(self, queries: list[Query], graph: HyperGraph, stage: str | None = None,
                neighbor_seed: int = 0) -> np.ndarray:
        """Probability vectors (B, N).  ``stage=None`` picks fine for qualified queries."""
        cfg = self.cfg
        if stage is not None and stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        if stage in ("fine", "combined") and not cfg.fna:
            raise ConfigError(f"stage {stage!r} needs the FNA+QMP branch")
        if stage in ("coarse", "combined") and not cfg.cna:
            raise ConfigError(f"stage {stage!r} needs the CNA+TP branch")
        with T.no_grad():
            out = self.forward(queries, graph, neighbor_seed=neighbor_seed)
        coarse = None if out.coarse_logits is None else _softmax(out.coarse_logits.data)
        fine = None if out.fine_logits is None else _softmax(out.fine_logits.data)
        if stage == "coarse":
            return coarse
        if stage == "fine":
            return fine
        if stage == "combined":
            return coarse + fine
        if coarse is None:
            return fine
        if fine is None:
            return coarse
        qualified = np.array([bool(q.qualifiers) for q in queries])[:, None]
        return np.where(qualified, fine, coarse)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def config_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(ModelConfig))
