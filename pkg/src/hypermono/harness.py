"""Training loop, configuration presets and the filtered-ranking evaluator."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, pack_optimizer, save_checkpoint
from .hkg import MASK_ID, DatasetBundle, Direction, HyperFact, HyperGraph, Query, answers
from .model import LOSS_NAMES, STAGES, ConfigError, HyperMono, ModelConfig
from .optim import OptimState, Schedule, lr_at, optimizer_step, zero_grad
from .tensor import NumericError

CHECKPOINT_NAME = "checkpoint.hmck"
CONFIG_NAME = "config.txt"
LOSSES_NAME = "losses.csv"
METRICS_NAME = "metrics.csv"
HITS = (1, 3, 10)


class CompatibilityError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a run.  Field names double as config-file keys, except
    the ablation switches which are spelled ``ablate.<name>`` in files."""

    seed: int = 0
    lr: float = 2e-3
    smoothing: float = 0.0
    d: int = 32
    gamma: float = 4.0
    init_range: float = 0.3
    neighbors: int = 3
    max_qualifiers: int = 6
    layers: int = 2
    heads: int = 2
    input_dropout: float = 0.0
    sublayer_dropout: float = 0.0
    epochs: int = 300
    batch_size: int = 32
    warmup_steps: int = 20
    lr_floor: float = 0.0
    weight_decay: float = 0.0
    eval_every: int = 0
    encoder_sharing: str = "paired"
    pool_mode: str = "elementwise"
    strict_containment: bool = False
    lambda1: float = 1.0
    lambda2: float = 1.0
    ablate_cna: bool = False
    ablate_fna: bool = False
    ablate_lei: bool = False
    ablate_gei: bool = False
    ablate_csb: bool = False

    def __post_init__(self):
        if self.lr < 0 or self.weight_decay < 0 or self.lr_floor < 0:
            raise ConfigError("lr, lr_floor and weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.warmup_steps < 0 or self.eval_every < 0:
            raise ConfigError("warmup_steps and eval_every must be >= 0")
        if not (0.0 <= self.input_dropout < 1.0 and 0.0 <= self.sublayer_dropout < 1.0):
            raise ConfigError("dropout rates must lie in [0, 1)")
        if self.init_range <= 0:
            raise ConfigError("init_range must be > 0")
        self.model_config()  # validates the model-side fields

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                d=self.d, layers=self.layers, heads=self.heads, input_dropout=self.input_dropout,
                sublayer_dropout=self.sublayer_dropout, gamma=self.gamma, neighbors=self.neighbors,
                max_qualifiers=self.max_qualifiers, smoothing=self.smoothing, lambda1=self.lambda1,
                lambda2=self.lambda2, init_range=self.init_range, encoder_sharing=self.encoder_sharing,
                pool_mode=self.pool_mode, strict_containment=self.strict_containment,
                cna=not self.ablate_cna, fna=not self.ablate_fna, lei=not self.ablate_lei,
                gei=not self.ablate_gei, csb=not self.ablate_csb,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_text(self) -> str:
        lines = [f"{_file_key(k)} = {_format(v)}" for k, v in asdict(self).items()]
        return "\n".join(lines) + "\n"


PRESETS: dict[str, dict] = {
    "desk-scale": {},
    "paper-scale": dict(
        lr=6e-4, smoothing=0.8, d=200, gamma=4.0, init_range=0.02, neighbors=3, max_qualifiers=6,
        layers=8, heads=8, input_dropout=0.7, epochs=200, batch_size=128, warmup_steps=1000,
    ),
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


def _file_key(name: str) -> str:
    return "ablate." + name[len("ablate_"):] if name.startswith("ablate_") else name


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, kind: type):
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r} as {kind.__name__}") from exc


_KINDS = {"int": int, "float": float, "bool": bool, "str": str}


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    kinds = {_file_key(f.name): (f.name, _KINDS[f.type]) for f in fields(TrainConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        name, kind = kinds[key]
        changes[name] = _parse_value(value, kind)
    return replace(base or TrainConfig(), **changes)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(), base)


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    checkpoint: Path
    losses: Path
    best_epoch: int
    epoch_losses: list[float] = field(default_factory=list)
    model: HyperMono | None = None


def neighbor_seed(seed: int) -> int:
    """Neighbor samples are drawn once per run seed and shared by training and evaluation."""
    return seed


def train(config: TrainConfig, bundle: DatasetBundle, out_dir, verbose: bool = False) -> TrainResult:
    """Optimise the joint loss; writes the checkpoint, the config and the loss curve to ``out_dir``."""
    if not bundle.train:
        raise ValueError("bundle has no training facts")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = HyperMono(config.model_config(), bundle.n_entities, bundle.n_relations, config.seed)
    graph = bundle.train_graph
    steps_per_epoch = math.ceil(len(bundle.train) / config.batch_size)
    total = config.epochs * steps_per_epoch
    schedule = Schedule(config.lr, min(config.warmup_steps, total - 1), total, config.lr_floor)
    state = OptimState(lr=config.lr, weight_decay=config.weight_decay)

    select_on_eval = config.eval_every > 0
    selection = bundle.model_selection_split(config.seed) if select_on_eval else None
    best_score, best_epoch, best_state, best_opt = -math.inf, 0, model.state_dict(), {}
    rows, epoch_losses = [], []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(bundle.train))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            facts = [bundle.train[i] for i in order[start:start + config.batch_size]]
            step += 1
            lr = lr_at(step, schedule)
            out_fw, parts = model.joint_forward(facts, graph, train=True,
                                                neighbor_seed=neighbor_seed(config.seed),
                                                epoch=epoch, step=step)
            loss = out_fw.loss
            if not loss.is_finite():
                T.get_tape().clear()
                raise NumericError(f"non-finite loss at step {step}")
            zero_grad(model.params)
            T.backward(loss, model.params.values())
            optimizer_step(model.params, state, lr)
            value = loss.item()
            total_loss += value * len(facts)
            rows.append([step] + [parts[k] for k in LOSS_NAMES] + [value, lr])
        epoch_loss = total_loss / len(bundle.train)
        epoch_losses.append(epoch_loss)
        if select_on_eval:
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                score = rank_model(model, bundle, selection, None).mrr
                if score > best_score:
                    best_score, best_epoch, best_state = score, epoch, model.state_dict()
                    best_opt = _copy_arrays(pack_optimizer(state))
        elif -epoch_loss > best_score:
            best_score, best_epoch, best_state = -epoch_loss, epoch, model.state_dict()
            best_opt = _copy_arrays(pack_optimizer(state))
        if verbose:
            print(f"epoch {epoch:4d}  loss {epoch_loss:.5f}", flush=True)

    model.load_state_dict(best_state)
    ckpt = save_checkpoint(out / CHECKPOINT_NAME, {**best_state, **best_opt})
    (out / CONFIG_NAME).write_text(config.to_text())
    losses = out / LOSSES_NAME
    with losses.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *LOSS_NAMES, "L_joint", "lr"])
        for r in rows:
            w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    return TrainResult(ckpt, losses, best_epoch, epoch_losses, model)


def _copy_arrays(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.array(v, copy=True) for k, v in tensors.items()}


# ---------------------------------------------------------------- ranking


def filtered_rank(scores: np.ndarray, gold: int, known_answers=(), exclude=()) -> int:
    """1 + number of competitors scoring >= gold after removing other true answers.

    ``known_answers`` are filtered (set to -inf) except the gold itself;
    ``exclude`` removes non-entity columns such as the mask token.
    """
    s = np.array(scores, dtype=float)
    if s.ndim != 1:
        raise ValueError("scores must be a vector")
    if not 0 <= gold < s.size:
        raise ValueError(f"gold {gold} outside 0..{s.size - 1}")
    drop = [e for e in set(known_answers) | set(exclude) if e != gold]
    if drop:
        s[drop] = -np.inf
    # the gold entry matches its own score, which supplies the leading 1
    return int(np.count_nonzero(s >= s[gold]))


@dataclass
class DirectionMetrics:
    mrr: float
    hits: dict[int, float]
    count: int


def metrics_from_ranks(ranks) -> DirectionMetrics:
    r = np.asarray(ranks, dtype=np.int64)
    if r.size == 0:
        raise ValueError("no ranks")
    if r.min() < 1:
        raise ValueError("ranks must be >= 1")
    mrr = math.fsum(1.0 / x for x in r.tolist()) / r.size
    hits = {k: float(np.count_nonzero(r <= k)) / r.size for k in HITS}
    return DirectionMetrics(mrr, hits, int(r.size))


@dataclass
class RankReport:
    ranks: dict[str, np.ndarray]
    per_direction: dict[str, DirectionMetrics]

    @property
    def mrr(self) -> float:
        return float(np.mean([m.mrr for m in self.per_direction.values()]))

    def hits(self, k: int) -> float:
        return float(np.mean([m.hits[k] for m in self.per_direction.values()]))

    def rows(self) -> list[list]:
        out = []
        for name, m in self.per_direction.items():
            out.append([name, m.mrr] + [m.hits[k] for k in HITS])
        out.append(["mean", self.mrr] + [self.hits(k) for k in HITS])
        return out

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["direction", "MRR", "H1", "H3", "H10"])
            for r in self.rows():
                w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
        return path


def rank_model(model: HyperMono, bundle: DatasetBundle, facts: list[HyperFact], stage: str | None,
               batch: int = 256, filter_graph: HyperGraph | None = None) -> RankReport:
    """Filtered ranks of every fact in both directions under the given stage."""
    if not facts:
        raise ValueError("split is empty")
    graph = bundle.train_graph
    filt = filter_graph or bundle.graph
    ranks = {}
    for direction in (Direction.HEAD, Direction.TAIL):
        queries = [Query.from_fact(f, direction) for f in facts]
        golds = [q.gold(f) for q, f in zip(queries, facts)]
        out = []
        for start in range(0, len(queries), batch):
            qs = queries[start:start + batch]
            probs = model.predict(qs, graph, stage, neighbor_seed=neighbor_seed(model.seed))
            for q, g, p in zip(qs, golds[start:start + batch], probs):
                out.append(filtered_rank(p, g, answers(q, filt), exclude=(MASK_ID,)))
        ranks[direction.value] = np.array(out, dtype=np.int64)
    return RankReport(ranks, {k: metrics_from_ranks(v) for k, v in ranks.items()})


def load_model(checkpoint, bundle: DatasetBundle, config: TrainConfig | None = None) -> HyperMono:
    """Rebuild a model from a checkpoint; the config defaults to the sibling ``config.txt``."""
    checkpoint = Path(checkpoint)
    if config is None:
        config = load_config(checkpoint.parent / CONFIG_NAME)
    tensors = load_checkpoint(checkpoint)
    ent, rel = tensors.get("model/ent"), tensors.get("model/rel")
    if ent is None or rel is None:
        raise CompatibilityError("checkpoint has no model/ent or model/rel block")
    if ent.shape[0] != bundle.n_entities or rel.shape[0] != bundle.n_relations:
        raise CompatibilityError(
            f"checkpoint vocabulary ({ent.shape[0]} entities, {rel.shape[0]} relations) does not match "
            f"bundle ({bundle.n_entities} entities, {bundle.n_relations} relations)")
    model = HyperMono(config.model_config(), bundle.n_entities, bundle.n_relations, config.seed)
    try:
        model.load_state_dict(tensors)
    except (KeyError, ValueError) as exc:
        raise CompatibilityError(str(exc)) from exc
    return model


def evaluate(checkpoint, bundle: DatasetBundle, split: str = "test", stage: str | None = None,
             config: TrainConfig | None = None, out_dir=None) -> RankReport:
    """Filtered MRR and Hits@k for both directions; writes ``metrics.csv`` when ``out_dir`` is given."""
    if stage is not None and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    model = load_model(checkpoint, bundle, config)
    report = rank_model(model, bundle, bundle.split(split), stage)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.write_csv(out / METRICS_NAME)
    return report
