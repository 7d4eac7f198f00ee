import io
import arrow
import numpy as np
import pytest
import hirex.trainer
from dataclasses import replace
from hirex.config import TrainConfig
from hirex.errors import DataError, NumericalError, TrainingDivergedError
from hirex.evaluation import evaluate
from hirex.params import ParameterStore, load_checkpoint, save_checkpoint
from hirex.pretrain import pretrain_transe
from hirex.synthetic import SyntheticSpec, generate_synthetic
from hirex.tasks import evaluation_tasks
from hirex.trainer import LOG_COLUMNS, train


QUICK = TrainConfig(
    k=3, m=4, candidate_size=20, dim=8, tasks_per_step=2, max_steps=4,
    eval_interval=2, neighbor_cap=10, seed=3,
)


def _run(g, config=QUICK):
    log_file = io.StringIO()
    checkpoint = train(g, g.splits["train"], config, log_file=log_file)
    return checkpoint, log_file.getvalue()


def test_smoke_run(small_graph):
    checkpoint, log = _run(small_graph)
    lines = log.splitlines()
    assert lines[0].split("\t") == list(LOG_COLUMNS)
    assert len(lines) == QUICK.max_steps + 1
    assert [s for s, _ in checkpoint.history] == [2, 4]
    assert checkpoint.step in (2, 4)
    assert checkpoint.best_mrr == max(m for _, m in checkpoint.history)
    assert checkpoint.meta["fingerprint"] == QUICK.fingerprint()
    assert set(checkpoint.params) == set(checkpoint.optimizer.first_moment)
    # validation columns are only filled on evaluation steps
    assert lines[1].split("\t")[5] == ""
    logged = float(lines[2].split("\t")[5])
    assert logged == pytest.approx(checkpoint.history[0][1], abs=1e-6)


def test_parameters_change(small_graph, tiny_params):
    before = tiny_params.snapshot()
    train(small_graph, small_graph.splits["train"], QUICK, params=tiny_params)
    after = tiny_params.snapshot()
    assert not np.array_equal(before["entity"], after["entity"])
    assert not np.array_equal(before["context.score"], after["context.score"])


def test_best_checkpoint_is_earliest_maximum(small_graph):
    checkpoint, _ = _run(small_graph)
    best = max(m for _, m in checkpoint.history)
    first = next(s for s, m in checkpoint.history if m == best)
    assert checkpoint.step == first


def test_deterministic(small_graph):
    first, first_log = _run(small_graph)
    second, second_log = _run(small_graph)
    assert first_log == second_log
    assert first.step == second.step
    for name, array in first.params.items():
        np.testing.assert_array_equal(array, second.params[name])
    tasks = evaluation_tasks(small_graph, "valid", 3, 20, QUICK.seed)
    one = evaluate(first.store(), small_graph, tasks, QUICK)
    two = evaluate(second.store(), small_graph, tasks, QUICK)
    assert one.to_text() == two.to_text()


def test_checkpoint_bytes_deterministic(small_graph, tmp_path):
    for name in ("a.npz", "b.npz"):
        checkpoint, _ = _run(small_graph)
        save_checkpoint(checkpoint, tmp_path / name)
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_threads_match_sequential(small_graph):
    sequential, sequential_log = _run(small_graph)
    threaded, threaded_log = _run(small_graph, replace(QUICK, workers=3))
    assert sequential_log == threaded_log
    for name, array in sequential.params.items():
        np.testing.assert_array_equal(array, threaded.params[name])


def test_other_seed_differs(small_graph):
    first, _ = _run(small_graph)
    second, _ = _run(small_graph, replace(QUICK, seed=4))
    assert not np.array_equal(first.params["entity"], second.params["entity"])


def test_no_training_relations(small_graph):
    with pytest.raises(DataError, match="Empty task list"):
        train(small_graph, (), QUICK)


def test_training_on_test_relations(small_graph):
    relations = small_graph.splits["train"] + small_graph.splits["test"]
    with pytest.raises(DataError, match="overlap"):
        train(small_graph, relations, QUICK)


def test_divergence_reports_step(small_graph, monkeypatch):
    def explode(*args, **kwargs):
        raise NumericalError("non-finite value", op="exp")

    monkeypatch.setattr(hirex.trainer, "task_loss", explode)
    with pytest.raises(TrainingDivergedError) as info:
        train(small_graph, small_graph.splits["train"], QUICK)
    assert info.value.step == 1
    assert info.value.exit_code == 3


def test_checkpoint_round_trip(small_graph, tmp_path):
    checkpoint, _ = _run(small_graph)
    save_checkpoint(checkpoint, tmp_path / "best.npz")
    loaded = load_checkpoint(tmp_path / "best.npz")
    assert loaded.step == checkpoint.step
    assert loaded.history == checkpoint.history
    assert loaded.optimizer.step == checkpoint.optimizer.step
    tasks = evaluation_tasks(small_graph, "valid", 3, 20, QUICK.seed)
    report = evaluate(loaded.store(), small_graph, tasks, QUICK)
    assert report.mrr == loaded.best_mrr


def test_without_validation_split(small_graph):
    checkpoint = train(
        small_graph, small_graph.splits["train"], QUICK, valid_tasks=[]
    )
    assert checkpoint.history == []
    assert checkpoint.step == QUICK.max_steps


@pytest.mark.parametrize(
    "ablations", [("no_mtransd",), ("no_mrl",), ("no_context",)]
)
def test_ablations_train(small_graph, ablations):
    checkpoint, _ = _run(small_graph, replace(QUICK, ablations=ablations))
    assert checkpoint.meta["fingerprint"].endswith(ablations[0])


def test_full_order_trains(small_graph):
    checkpoint, _ = _run(small_graph, replace(QUICK, maml_order="full", max_steps=2))
    assert len(checkpoint.history) == 1


# Long runs on the synthetic benchmark

BENCHMARK = SyntheticSpec(
    entities=200,
    background_relations=2,
    train_relations=10,
    valid_relations=2,
    test_relations=3,
    candidate_size=50,
    seed=11,
)
BENCHMARK_CONFIG = TrainConfig(
    k=5, m=10, candidate_size=50, dim=32, lr=0.003, tasks_per_step=8,
    max_steps=1500, eval_interval=500, neighbor_cap=10, pretrain_epochs=200, seed=1,
)
# A random ranker over 50 candidates scores Hits@10 = 0.2 and MRR ~ 0.09.
MIN_HITS_AT_10 = 0.5
MIN_MRR = 0.25
TIME_BUDGET_SECONDS = 600


@pytest.fixture(scope="module")
def benchmark_graph():
    return generate_synthetic(BENCHMARK).graph


def _pretrained_run(g, config):
    tables = pretrain_transe(
        g, config.dim, config.pretrain_epochs, config.pretrain_lr, config.seed
    )
    params = ParameterStore.initialize(
        g.num_entities,
        g.num_relation_ids,
        config.dim,
        config.seed,
        entity=tables.entity,
        relation=tables.relation,
    )
    log_file = io.StringIO()
    checkpoint = train(g, g.splits["train"], config, params=params, log_file=log_file)
    return checkpoint, log_file.getvalue()


def _test_mrr(g, checkpoint, config):
    tasks = evaluation_tasks(g, "test", config.k, config.candidate_size, config.seed)
    return evaluate(checkpoint.store(), g, tasks, config)


@pytest.mark.slow
def test_smoothed_loss_decreases(benchmark_graph):
    config = replace(BENCHMARK_CONFIG, eval_interval=BENCHMARK_CONFIG.max_steps)
    _, log = _pretrained_run(benchmark_graph, config)
    losses = np.array([float(row.split("\t")[1]) for row in log.splitlines()[1:]])
    smoothed = np.convolve(losses, np.ones(100) / 100, mode="valid")
    assert smoothed[-1] < smoothed[0]
    windows = smoothed[::100]
    assert (np.diff(windows) <= 0.05 * windows[0]).all()


@pytest.mark.slow
def test_synthetic_learnability(benchmark_graph, capsys):
    start = arrow.utcnow()
    checkpoint, _ = _pretrained_run(benchmark_graph, BENCHMARK_CONFIG)
    report = _test_mrr(benchmark_graph, checkpoint, BENCHMARK_CONFIG)
    elapsed = (arrow.utcnow() - start).total_seconds()
    with capsys.disabled():
        print()
        print(report.to_text())
        print(f"elapsed\t{elapsed:.0f}s")
    assert report.hits_at_10 >= MIN_HITS_AT_10
    assert report.mrr >= MIN_MRR
    assert elapsed < TIME_BUDGET_SECONDS


@pytest.mark.slow
def test_ablation_gaps(benchmark_graph, capsys):
    config = replace(BENCHMARK_CONFIG, max_steps=500)
    variants = dict(
        full=config,
        no_mrl=replace(config, ablations=("no_mrl",)),
        lambda_0=replace(config, contrastive_weight=0.0),
    )
    mrr = dict()
    for name, variant in variants.items():
        checkpoint, _ = _pretrained_run(benchmark_graph, variant)
        mrr[name] = _test_mrr(benchmark_graph, checkpoint, variant).mrr
    with capsys.disabled():
        print(
            f"\nfull {mrr['full']:.4f}"
            f"  gap vs no_mrl {mrr['full'] - mrr['no_mrl']:+.4f}"
            f"  gap vs lambda=0 {mrr['full'] - mrr['lambda_0']:+.4f}"
        )
    assert all(0 < value <= 1 for value in mrr.values())
