"""
Training service.
Balanced batching, the cached query-graph store, the optimisation loop and
checkpoint persistence.
"""
import csv
import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import islice
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from ..config import config_from_text, dump_config_text, parse_config_text
from ..errors import CheckpointError, InputFormatError, NoSubgraphError, NumericError, OutputError, TrainingDivergedError
from ..graph.query import LabelSet, Query
from ..graph.query_graph import QueryGraph, batch_graphs, extract_subgraph
from ..kb.knowledge_base import KnowledgeBase
from ..logging_config import logger
from ..model import ModelParams, expected_shapes, forward, loss
from ..schemas import ModelConfig, TrainConfig
from ..tensor import AdamState, Tape, adam_step, cosine_lr
from ..tensor.container import read_container, write_container

EpochHook = Callable[[int, ModelParams], None]


# ==================== Query-graph cache ====================

class GraphCache:
    """Query graphs extracted once per (e_s, e_t, L)."""

    def __init__(self, kb: KnowledgeBase, max_path_length: int, threads: int = 1):
        self.kb = kb
        self.max_path_length = max_path_length
        self.threads = max(1, threads)
        self._graphs: Dict[Tuple[int, int, int], Optional[QueryGraph]] = {}

    def __len__(self) -> int:
        return sum(1 for g in self._graphs.values() if g is not None)

    def _key(self, q: Query) -> Tuple[int, int, int]:
        return q.source, q.target, self.max_path_length

    def _extract(self, key: Tuple[int, int, int]) -> Optional[QueryGraph]:
        try:
            return extract_subgraph(self.kb, *key)
        except NoSubgraphError:
            return None

    def get(self, q: Query) -> Optional[QueryGraph]:
        key = self._key(q)
        if key not in self._graphs:
            self._graphs[key] = self._extract(key)
        return self._graphs[key]

    def warm(self, queries: Sequence[Query]) -> List[Query]:
        """
        Extract every query's graph and return the queries that have one.

        Queries without a path of length <= L are skipped and logged.
        """
        missing = list(dict.fromkeys(self._key(q) for q in queries if self._key(q) not in self._graphs))
        if self.threads > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                graphs = list(pool.map(self._extract, missing))
        else:
            graphs = [self._extract(key) for key in missing]
        self._graphs.update(zip(missing, graphs))

        usable = [q for q in queries if self._graphs[self._key(q)] is not None]
        skipped = len(queries) - len(usable)
        if skipped:
            logger.warning(
                "Skipped queries without a subgraph",
                skipped=skipped,
                max_path_length=self.max_path_length,
            )
        logger.info("Query graphs cached", cached=len(self), threads=self.threads)
        return usable


# ==================== Batching ====================

def make_balanced_batches(
    queries: Sequence[Query], batch_size: int, seed: int, epoch: int = 0
) -> Iterator[List[Query]]:
    """
    Endless stream of polarity-balanced batches for one epoch.

    Instances alternate positive/negative along the stream (positives at even
    global offsets), so every batch splits ceil(B/2) to floor(B/2) between
    the polarities and B=1 alternates across steps. Each pool is
    shuffled with a seed derived from (seed, epoch) and cycled; the smaller
    pool wraps around first.

    Raises:
        InputFormatError: either pool is empty
    """
    positives = [q for q in queries if q.positive]
    negatives = [q for q in queries if not q.positive]
    if not positives or not negatives:
        raise InputFormatError(
            f"balanced batching needs both polarities, got {len(positives)} positive "
            f"and {len(negatives)} negative queries"
        )

    pos_order = np.random.default_rng([seed, epoch, 0]).permutation(len(positives))
    neg_order = np.random.default_rng([seed, epoch, 1]).permutation(len(negatives))
    offset = 0
    n_pos = n_neg = 0
    while True:
        batch = []
        for _ in range(batch_size):
            if offset % 2 == 0:
                batch.append(positives[pos_order[n_pos % len(positives)]])
                n_pos += 1
            else:
                batch.append(negatives[neg_order[n_neg % len(negatives)]])
                n_neg += 1
            offset += 1
        yield batch


# ==================== Run log ====================

@dataclass
class StepRecord:
    step: int
    epoch: int
    loss: float
    wallclock_ms: float


@dataclass
class EpochSummary:
    epoch: int
    steps: int
    mean_loss: float
    wallclock_ms: float


@dataclass
class RunLog:
    steps: List[StepRecord] = field(default_factory=list)
    epochs: List[EpochSummary] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [r.loss for r in self.steps]

    def digest(self) -> str:
        """sha256 over (step, epoch, loss); wall-clock time is excluded."""
        h = hashlib.sha256()
        for r in self.steps:
            h.update(f"{r.step},{r.epoch},{r.loss!r}\n".encode("utf-8"))
        return h.hexdigest()

    def write_csv(self, path: str):
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["step", "epoch", "loss", "wallclock_ms"])
                for r in self.steps:
                    writer.writerow([r.step, r.epoch, repr(r.loss), f"{r.wallclock_ms:.3f}"])
        except OSError as e:
            raise OutputError(f"cannot write run log to {path}: {e.strerror}") from None


# ==================== Checkpoints ====================

@dataclass
class Checkpoint:
    params: ModelParams
    optimizer: AdamState
    train_config: TrainConfig

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config


def config_path(checkpoint_path: str) -> str:
    return checkpoint_path + ".cfg"


def save_checkpoint(path: str, params: ModelParams, optimizer: AdamState, train_config: TrainConfig):
    """Write tensors and optimizer state to `path` and the resolved config to `<path>.cfg`."""
    arrays = {**params.to_arrays(), **optimizer.to_arrays()}
    write_container(path, arrays)
    try:
        with open(config_path(path), "w", encoding="utf-8") as f:
            f.write(dump_config_text(params.config, train_config))
    except OSError as e:
        raise OutputError(f"cannot write checkpoint config {config_path(path)}: {e.strerror}") from None
    logger.info("Checkpoint written", path=path, step=optimizer.step, tensors=len(arrays))


def load_checkpoint(path: str) -> Checkpoint:
    """
    Read a checkpoint and its config.

    Raises:
        MissingFileError: checkpoint absent
        CheckpointError: corrupt container, missing config, or tensors that
            disagree with the config
    """
    arrays = read_container(path)
    cfg_path = config_path(path)
    if not os.path.isfile(cfg_path):
        raise CheckpointError(f"checkpoint config not found: {cfg_path}")
    with open(cfg_path, "r", encoding="utf-8") as f:
        model_config, train_config = config_from_text(parse_config_text(f, source=cfg_path))

    params = ModelParams.from_arrays(model_config, arrays)
    optimizer = AdamState.from_arrays(
        arrays,
        lr=train_config.lr,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.eps,
    )
    unknown = set(optimizer.m) - set(expected_shapes(model_config))
    if unknown:
        raise CheckpointError(f"optimizer state for unknown tensor '{sorted(unknown)[0]}'")
    logger.info("Checkpoint loaded", path=path, step=optimizer.step)
    return Checkpoint(params=params, optimizer=optimizer, train_config=train_config)


def check_compatible(config: ModelConfig, kb: KnowledgeBase):
    """A checkpoint's lookup tables must cover the KB it is applied to."""
    if config.num_relations != kb.num_relations:
        raise CheckpointError(
            f"checkpoint has {config.num_relations} relations, knowledge base has {kb.num_relations}"
        )
    if config.variant != "relation" and config.num_types != kb.num_types:
        raise CheckpointError(f"checkpoint has {config.num_types} types, knowledge base has {kb.num_types}")


# ==================== Training loop ====================

def prepare_model_config(model_config: ModelConfig, kb: KnowledgeBase, labels: LabelSet) -> ModelConfig:
    """Fill table sizes and the class vocabulary from the data."""
    values = model_config.model_dump()
    values.update(
        num_relations=kb.num_relations,
        num_types=kb.num_types,
        num_classes=len(labels),
        labels=labels.names,
    )
    return ModelConfig(**values)


@dataclass
class TrainResult:
    params: ModelParams
    run_log: RunLog
    optimizer: AdamState
    labels: LabelSet


def train(
    kb: KnowledgeBase,
    queries: Sequence[Query],
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_path: Optional[str] = None,
    resume: Optional[Checkpoint] = None,
    on_epoch_end: Optional[EpochHook] = None,
    threads: int = 1,
    stop_after: Optional[int] = None,
) -> TrainResult:
    """
    Run epochs x steps_per_epoch Adam steps on balanced batches.

    Args:
        kb: Frozen knowledge base
        queries: Labelled training queries
        model_config: Architecture; table sizes and labels are filled from the data
        train_config: Schedule and optimizer settings
        checkpoint_path: Where to write checkpoints (every `checkpoint_every`
            epochs, and after the last step)
        resume: Checkpoint to continue from; its model config wins
        on_epoch_end: Called with (epoch, params) after every epoch
        threads: Extraction parallelism; forced to 1 in deterministic mode
        stop_after: Stop once this global step count is reached (interruption)

    Returns:
        TrainResult with params, run log, optimizer state and label vocabulary

    Raises:
        TrainingDivergedError: non-finite loss; the step is recorded
    """
    if resume is not None:
        params, optimizer = resume.params, resume.optimizer
        optimizer.lr = train_config.lr
        labels = LabelSet.from_names(params.config.labels)
        model_config = params.config
        check_compatible(model_config, kb)
    else:
        labels = LabelSet.from_queries(queries)
        model_config = prepare_model_config(model_config, kb, labels)
        params = ModelParams.initialize(model_config, seed=train_config.seed)
        optimizer = AdamState(
            lr=train_config.lr,
            beta1=train_config.beta1,
            beta2=train_config.beta2,
            eps=train_config.eps,
        )

    cache = GraphCache(
        kb,
        train_config.max_path_length,
        threads=1 if train_config.deterministic else threads,
    )
    usable = cache.warm(queries)
    for q in usable:
        labels.label(q)  # raises LabelError before the first step

    spe = train_config.steps_per_epoch
    total = train_config.epochs * spe
    end = total if stop_after is None else min(total, stop_after)
    start = optimizer.step
    run_log = RunLog()

    logger.info(
        "Training started",
        queries=len(usable),
        classes=len(labels),
        variant=model_config.variant,
        start_step=start,
        total_steps=total,
    )

    step = start
    while step < end:
        epoch = step // spe
        batches = islice(
            make_balanced_batches(usable, train_config.batch_size, train_config.seed, epoch),
            step - epoch * spe,
            None,
        )
        epoch_start = time.perf_counter()
        epoch_losses: List[float] = []
        while step < end and step // spe == epoch:
            batch = next(batches)
            structlog.contextvars.bind_contextvars(epoch=epoch, step=step)
            t0 = time.perf_counter()

            graph = batch_graphs([cache.get(q) for q in batch], dtype=params.dtype)
            try:
                with Tape(checked=train_config.checked) as tape:
                    tape.watch(params)
                    objective = loss(forward(graph, params, model_config), [labels.label(q) for q in batch])
            except NumericError as e:
                raise TrainingDivergedError(str(e.detail), step) from None
            value = objective.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss is {value}", step)

            grads = tape.backward(objective)
            if train_config.lr_schedule == "cosine":
                optimizer.lr = cosine_lr(train_config.lr, step, total)
            adam_step(
                params,
                grads,
                optimizer,
                weight_decay=train_config.weight_decay,
                clip_norm=train_config.clip_norm,
            )

            run_log.steps.append(StepRecord(step, epoch, value, (time.perf_counter() - t0) * 1000.0))
            epoch_losses.append(value)
            if step % train_config.log_every == 0:
                logger.info("Training step", loss=round(value, 6))
            step += 1

        structlog.contextvars.unbind_contextvars("epoch", "step")
        elapsed = (time.perf_counter() - epoch_start) * 1000.0
        run_log.epochs.append(EpochSummary(epoch, len(epoch_losses), float(np.mean(epoch_losses)), elapsed))

        epoch_done = step % spe == 0
        if epoch_done:
            logger.info("Epoch finished", epoch=epoch, mean_loss=round(float(np.mean(epoch_losses)), 6))
            every = train_config.checkpoint_every
            if checkpoint_path and every and (epoch + 1) % every == 0 and step < end:
                save_checkpoint(checkpoint_path, params, optimizer, train_config)
            if on_epoch_end is not None:
                on_epoch_end(epoch, params)

    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, optimizer, train_config)
    logger.info("Training finished", steps=len(run_log.steps), digest=run_log.digest())
    return TrainResult(params=params, run_log=run_log, optimizer=optimizer, labels=labels)
