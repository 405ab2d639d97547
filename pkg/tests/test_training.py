import os
from itertools import islice

import numpy as np
import pytest

from conftest import make_kb
from kglinker.config import resolve_config
from kglinker.errors import CheckpointError, InputFormatError, LabelError, OutputError, TrainingDivergedError
from kglinker.graph.query import LabelSet, Query
from kglinker.schemas import ModelConfig, SynthSpec, TrainConfig
from kglinker.services.eval_service import evaluate
from kglinker.services.synth_service import generate
from kglinker.services.training_service import (
    GraphCache,
    RunLog,
    StepRecord,
    check_compatible,
    config_path,
    load_checkpoint,
    make_balanced_batches,
    train,
)
from kglinker.tensor import cosine_lr


@pytest.fixture
def ring_kb():
    return make_kb(
        [
            ("a", "r", "b"), ("b", "s", "c"), ("c", "r", "d"), ("d", "s", "e"),
            ("a", "s", "e"), ("b", "r", "e"), ("x", "r", "y"),
        ],
        {"a": ["p"], "b": ["q"], "c": ["p"], "d": ["q"], "e": ["p", "q"]},
    )


@pytest.fixture
def ring_queries(ring_kb):
    e = ring_kb.entities.lookup
    return [
        Query(e("a"), e("c"), "rs", True),
        Query(e("c"), e("e"), "rs", True),
        Query(e("b"), e("d"), "sr", True),
        Query(e("a"), e("e"), "rs", False),
        Query(e("a"), e("d"), "sr", False),
        Query(e("b"), e("e"), "rs", False),
    ]


MODEL = ModelConfig(dim=8, t_max=2)


def _train_config(**overrides) -> TrainConfig:
    values = dict(
        batch_size=4, steps_per_epoch=3, epochs=2, lr=1e-2, seed=0,
        max_path_length=3, deterministic=True, log_every=1,
    )
    values.update(overrides)
    return TrainConfig(**values)


def _pools(n_pos, n_neg):
    return [Query(i, i + 1, "r", True) for i in range(n_pos)] + [Query(100 + i, 101 + i, "r", False) for i in range(n_neg)]


# ==================== Balanced batching ====================

def test_batches_split_evenly_and_alternate():
    stream = make_balanced_batches(_pools(7, 3), batch_size=10, seed=1)
    for batch in islice(stream, 5):
        assert [q.positive for q in batch] == [True, False] * 5


def test_batch_of_one_alternates_across_steps():
    stream = make_balanced_batches(_pools(2, 2), batch_size=1, seed=1)
    assert [b[0].positive for b in islice(stream, 6)] == [True, False] * 3


def test_odd_batches_keep_global_alternation():
    stream = make_balanced_batches(_pools(4, 4), batch_size=3, seed=0)
    flat = [q.positive for b in islice(stream, 4) for q in b]
    assert flat == [True, False] * 6


def test_pools_cycle_through_every_member():
    queries = _pools(5, 5)
    first_cycle = [q for b in islice(make_balanced_batches(queries, 2, seed=3), 5) for q in b]
    assert sorted(first_cycle) == sorted(queries)


def test_batch_stream_depends_only_on_seed_and_epoch():
    queries = _pools(10, 10)

    def take(seed, epoch):
        return list(islice(make_balanced_batches(queries, 4, seed, epoch), 10))

    assert take(5, 0) == take(5, 0)
    assert take(5, 1) == take(5, 1)
    assert take(5, 0) != take(5, 1)
    assert take(5, 0) != take(6, 0)


def test_missing_polarity_is_rejected():
    with pytest.raises(InputFormatError):
        next(make_balanced_batches(_pools(3, 0), 2, seed=0))
    with pytest.raises(InputFormatError):
        next(make_balanced_batches(_pools(0, 3), 2, seed=0))


# ==================== Graph cache ====================

def test_cache_skips_queries_without_subgraph(ring_kb, ring_queries):
    e = ring_kb.entities.lookup
    stranded = Query(e("a"), e("x"), "rs", False)
    cache = GraphCache(ring_kb, 3)
    usable = cache.warm(ring_queries + [stranded])
    assert usable == ring_queries
    assert cache.get(stranded) is None
    assert cache.get(ring_queries[0]) is cache.get(ring_queries[0])


def test_threaded_cache_matches_serial(ring_kb, ring_queries):
    serial = GraphCache(ring_kb, 3, threads=1)
    threaded = GraphCache(ring_kb, 3, threads=4)
    assert serial.warm(ring_queries) == threaded.warm(ring_queries)
    for q in ring_queries:
        assert serial.get(q) == threaded.get(q)


# ==================== Run log ====================

def test_run_log_digest_ignores_wall_clock():
    a = RunLog(steps=[StepRecord(0, 0, 1.25, 3.0), StepRecord(1, 0, 1.0, 4.0)])
    b = RunLog(steps=[StepRecord(0, 0, 1.25, 99.0), StepRecord(1, 0, 1.0, 0.1)])
    c = RunLog(steps=[StepRecord(0, 0, 1.25, 3.0), StepRecord(1, 0, 1.0000001, 4.0)])
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_run_log_csv(tmp_path):
    log = RunLog(steps=[StepRecord(0, 0, 0.5, 1.0)])
    path = tmp_path / "runlog.csv"
    log.write_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "step,epoch,loss,wallclock_ms"
    assert lines[1].startswith("0,0,0.5,")
    with pytest.raises(OutputError):
        log.write_csv(str(tmp_path / "missing" / "runlog.csv"))


# ==================== Training loop ====================

def test_single_step_run_makes_one_update(ring_kb, ring_queries):
    result = train(ring_kb, ring_queries, MODEL, _train_config(epochs=1, steps_per_epoch=1))
    assert result.optimizer.step == 1
    assert len(result.run_log.steps) == 1
    assert result.run_log.steps[0].epoch == 0
    assert result.labels.names == ("<null>", "rs", "sr")
    assert result.params.config.num_classes == 3
    assert result.params.config.num_relations == ring_kb.num_relations


def test_training_is_deterministic(ring_kb, ring_queries):
    first = train(ring_kb, ring_queries, MODEL, _train_config())
    second = train(ring_kb, ring_queries, MODEL, _train_config())
    assert first.run_log.digest() == second.run_log.digest()
    assert first.run_log.losses == second.run_log.losses
    for name, p in first.params.items():
        assert p.data.tobytes() == second.params[name].data.tobytes()

    other = train(ring_kb, ring_queries, MODEL, _train_config(seed=1))
    assert other.run_log.digest() != first.run_log.digest()


def test_run_log_records_every_step(ring_kb, ring_queries):
    seen = []
    result = train(
        ring_kb, ring_queries, MODEL, _train_config(),
        on_epoch_end=lambda epoch, params: seen.append(epoch),
    )
    assert [r.step for r in result.run_log.steps] == list(range(6))
    assert [r.epoch for r in result.run_log.steps] == [0, 0, 0, 1, 1, 1]
    assert [s.epoch for s in result.run_log.epochs] == [0, 1]
    assert seen == [0, 1]
    assert all(np.isfinite(result.run_log.losses))


def test_checkpoint_round_trip_is_bitwise(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    result = train(ring_kb, ring_queries, MODEL, _train_config(), checkpoint_path=path)
    ckpt = load_checkpoint(path)

    assert ckpt.optimizer.step == result.optimizer.step == 6
    assert ckpt.model_config == result.params.config
    assert ckpt.train_config == _train_config()
    for name, p in result.params.items():
        assert ckpt.params[name].data.tobytes() == p.data.tobytes()
        assert ckpt.optimizer.m[name].tobytes() == result.optimizer.m[name].tobytes()
        assert ckpt.optimizer.v[name].tobytes() == result.optimizer.v[name].tobytes()


@pytest.mark.parametrize("stop_after", [3, 4])
def test_resume_reproduces_uninterrupted_run(tmp_path, ring_kb, ring_queries, stop_after):
    full = train(ring_kb, ring_queries, MODEL, _train_config())

    path = str(tmp_path / "model.kglt")
    head = train(ring_kb, ring_queries, MODEL, _train_config(), checkpoint_path=path, stop_after=stop_after)
    assert head.optimizer.step == stop_after
    tail = train(ring_kb, ring_queries, MODEL, _train_config(), resume=load_checkpoint(path))

    assert [r.step for r in tail.run_log.steps] == list(range(stop_after, 6))
    assert head.run_log.losses + tail.run_log.losses == full.run_log.losses
    for name, p in full.params.items():
        assert tail.params[name].data.tobytes() == p.data.tobytes()



def test_resume_with_cosine_schedule_reproduces_uninterrupted_run(tmp_path, ring_kb, ring_queries):
    config = _train_config(lr_schedule="cosine")
    full = train(ring_kb, ring_queries, MODEL, config)

    path = str(tmp_path / "model.kglt")
    head = train(ring_kb, ring_queries, MODEL, config, checkpoint_path=path, stop_after=2)
    tail = train(ring_kb, ring_queries, MODEL, config, resume=load_checkpoint(path))
    assert head.run_log.losses + tail.run_log.losses == full.run_log.losses
    assert full.optimizer.lr == pytest.approx(cosine_lr(1e-2, 5, 6))


def test_resume_can_extend_a_finished_run(tmp_path, ring_kb, ring_queries):
    full = train(ring_kb, ring_queries, MODEL, _train_config(epochs=2))

    path = str(tmp_path / "model.kglt")
    short = train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    resumed = load_checkpoint(path)
    assert resumed.train_config.epochs == 1
    extended = train(ring_kb, ring_queries, MODEL, _train_config(epochs=2), resume=resumed)

    assert [r.step for r in extended.run_log.steps] == [3, 4, 5]
    assert short.run_log.losses + extended.run_log.losses == full.run_log.losses


def test_cosine_schedule_endpoints():
    assert cosine_lr(1e-3, 0, 300) == 1e-3
    assert cosine_lr(1e-3, 150, 300) == pytest.approx(5e-4)
    assert cosine_lr(1e-3, 300, 300) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(1e-3, 10, 0) == 1e-3

def test_corrupt_checkpoint_is_rejected(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)

    raw = bytearray(open(path, "rb").read())
    raw[len(raw) // 2] ^= 0xFF
    with open(path, "wb") as f:
        f.write(bytes(raw))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_without_config_is_rejected(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    os.remove(config_path(path))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_must_match_knowledge_base(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    ckpt = load_checkpoint(path)
    check_compatible(ckpt.model_config, ring_kb)

    wider = make_kb([("a", "r", "b"), ("b", "s", "c"), ("c", "t", "a")], {"a": ["p"], "b": ["q"]})
    with pytest.raises(CheckpointError):
        check_compatible(ckpt.model_config, wider)
    with pytest.raises(CheckpointError):
        train(wider, ring_queries, MODEL, _train_config(), resume=ckpt)

    retyped = make_kb([("a", "r", "b"), ("b", "s", "c")], {"a": ["p", "q", "z"]})
    with pytest.raises(CheckpointError):
        check_compatible(ckpt.model_config, retyped)


def test_unknown_relation_on_resume_is_a_label_error(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    e = ring_kb.entities.lookup
    extra = ring_queries + [Query(e("a"), e("c"), "unseen", True)]
    with pytest.raises(LabelError):
        train(ring_kb, extra, MODEL, _train_config(), resume=load_checkpoint(path))



@pytest.mark.parametrize("name", ["part,whole", "left|right"])
def test_target_relations_with_list_separators_are_rejected(ring_kb, ring_queries, name):
    e = ring_kb.entities.lookup
    with pytest.raises(LabelError):
        LabelSet.from_queries([Query(e("a"), e("c"), name, True)])
    with pytest.raises(LabelError):
        train(ring_kb, ring_queries + [Query(e("b"), e("d"), name, True)], MODEL, _train_config())

def test_non_finite_loss_reports_the_step(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    ckpt = load_checkpoint(path)
    ckpt.params["rel_emb"].data[:] = np.nan

    with pytest.raises(TrainingDivergedError) as err:
        train(ring_kb, ring_queries, MODEL, _train_config(), resume=ckpt)
    assert err.value.step == 3


def test_checked_mode_stops_at_first_non_finite_op(tmp_path, ring_kb, ring_queries):
    path = str(tmp_path / "model.kglt")
    train(ring_kb, ring_queries, MODEL, _train_config(epochs=1), checkpoint_path=path)
    ckpt = load_checkpoint(path)
    ckpt.params["rel_emb"].data[:] = np.inf

    with pytest.raises(TrainingDivergedError):
        train(ring_kb, ring_queries, MODEL, _train_config(checked=True), resume=ckpt)


# ==================== Learning ====================

@pytest.mark.slow
@pytest.mark.parametrize("variant", ["relation", "mean", "sum"])
def test_loss_falls_on_planted_rules(variant):
    data = generate(SynthSpec(entities=60, base_relations=4, rules=2, types=3, density=0.05, seed=11))
    config = ModelConfig(dim=16, t_max=4, variant=variant)
    result = train(
        data.kb, data.train, config,
        TrainConfig(batch_size=10, steps_per_epoch=10, epochs=15, lr=1e-2, max_path_length=3, deterministic=True),
    )
    first, last = result.run_log.epochs[0].mean_loss, result.run_log.epochs[-1].mean_loss
    assert last < first


@pytest.mark.slow
def test_desk_profile_learns_planted_rules():
    accuracies = []
    for seed in (7, 8, 9):
        data = generate(SynthSpec(entities=300, base_relations=10, rules=4, density=0.02, seed=seed))
        model_config, train_config = resolve_config("desk", overrides={"seed": seed, "deterministic": True})
        assert (model_config.dim, model_config.t_max, model_config.variant) == (32, 8, "sum")
        assert train_config.batch_size == 10

        result = train(data.kb, data.train, model_config, train_config)
        assert result.optimizer.step == 300

        report = evaluate(data.kb, data.test, result.params, train_config.max_path_length, with_paths=False)
        assert report.skipped == 0
        accuracies.append(report.aggregates.avg_accuracy)
    assert np.median(accuracies) >= 0.90, accuracies


@pytest.mark.slow
def test_typed_variants_lower_the_loss_faster():
    at_step_200 = {"relation": [], "mean": [], "sum": []}
    for seed in (7, 8, 9):
        data = generate(SynthSpec(seed=seed))
        for variant in at_step_200:
            model_config, train_config = resolve_config(
                "desk", overrides={"seed": seed, "variant": variant, "deterministic": True}
            )
            result = train(data.kb, data.train, model_config, train_config, stop_after=200)
            # batch losses are noisy; average the 20 steps ending at step 200
            at_step_200[variant].append(float(np.mean(result.run_log.losses[-20:])))

    median = {variant: np.median(losses) for variant, losses in at_step_200.items()}
    assert median["sum"] <= median["relation"], median
    assert median["mean"] <= median["relation"], median
