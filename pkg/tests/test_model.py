import math
import numpy as np
import pytest
from hirex.config import TrainConfig
from hirex.context import ContrastiveBatch, anchor_embedding, contrastive_loss, encode_context
from hirex.kg import Triplet
from hirex.model import (
    TaskProjections,
    adapt,
    inner_update,
    query_loss,
    reference_loss,
    score_candidates,
    task_loss,
    total_loss,
)
from hirex.params import ParameterStore, parameter_shapes
from hirex.relation import MetaRelation, meta_representation, reference_matrix
from hirex.tasks import (
    FewShotTask,
    TripletContext,
    build_context,
    build_task,
    synthesize_false_contexts,
)
from hirex.tensor import Tensor, backward, finite_diff_check, grad


SMALL = TrainConfig(
    k=3, m=4, candidate_size=20, dim=8, tasks_per_step=2, max_steps=3,
    eval_interval=2, neighbor_cap=10,
)


def _task(references, queries, reference_negatives, query_negatives):
    return FewShotTask(
        relation=0,
        references=tuple(references),
        queries=tuple(queries),
        candidates=tuple((t, n) for (_, t), n in zip(queries, query_negatives)),
        reference_candidates=tuple(
            (t, n) for (_, t), n in zip(references, reference_negatives)
        ),
        reference_negatives=tuple(reference_negatives),
        query_negatives=tuple(query_negatives),
    )


def test_inner_step_follows_norm_gradient():
    # h = t = 0 and the negative sits exactly on h + R, so only the positive branch
    # contributes: grad = R / |R|
    params = dict(entity=Tensor([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]]))
    meta = MetaRelation(Tensor([3.0, 4.0], requires_grad=True))
    task = _task([(0, 1)], [(0, 1)], [2], [2])
    refined, projections, loss = inner_update(task, meta, params, None, 1.0)
    assert projections is None
    assert loss.item() == pytest.approx(6.0)
    np.testing.assert_allclose(refined.translation.data, [2.4, 3.2])


def test_zero_gradient_is_fixed_point():
    params = dict(entity=Tensor([[0.0, 0.0], [1.0, 0.0], [10.0, 10.0]]))
    meta = MetaRelation(Tensor([1.0, 0.0], requires_grad=True))
    task = _task([(0, 1)], [(0, 1)], [2], [2])
    refined, _, loss = inner_update(task, meta, params, None, 1.0)
    assert loss.item() == 0
    np.testing.assert_array_equal(refined.translation.data, [1.0, 0.0])


def test_zero_inner_lr_keeps_values(small_graph, tiny_params):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    config = TrainConfig(**(vars(SMALL) | dict(inner_lr=0.0)))
    meta, projections, _ = adapt(task, tiny_params, config)
    assert meta.refined_relation is meta.relation
    assert meta.refined_projection is meta.projection


def test_query_loss_arithmetic():
    params = dict(entity=Tensor([[0.0, 0.0], [1.0, 0.0], [1.2, 0.0]]))
    relation = Tensor([0.0, 0.0])
    meta = MetaRelation(relation).refine(relation)
    task = _task([(0, 1)], [(0, 1)], [2], [2])
    assert query_loss(task, meta, params, None, 1.0).item() == pytest.approx(0.8)


def test_query_loss_needs_refinement():
    params = dict(entity=Tensor([[0.0, 0.0], [1.0, 0.0]]))
    task = _task([(0, 1)], [(0, 1)], [0], [0])
    with pytest.raises(ValueError):
        query_loss(task, MetaRelation(Tensor([0.0, 0.0])), params, None, 1.0)


def test_query_loss_matches_straight_line(rng):
    d = 8
    entity = rng.normal(size=(10, d))
    table = rng.normal(size=(10, d)) * 0.3
    relation, projection = rng.normal(size=d), rng.normal(size=d) * 0.3
    params = dict(entity=Tensor(entity))
    references = [(0, 1), (2, 3)]
    projections = TaskProjections.for_references(Tensor(table), references)
    local = projections.local.data + 0.01  # 0, 1 and 3 also appear in queries
    projections = projections.with_local(Tensor(local))
    meta = MetaRelation(Tensor(relation)).refine(Tensor(relation), Tensor(projection))
    queries, negatives = [(0, 5), (6, 7), (8, 3)], [9, 4, 1]
    task = _task(references, queries, [4, 5], negatives)

    def project(e):
        return entity[e] + projection * (table[e] @ entity[e])

    def score(h, t):
        return np.linalg.norm(project(h) + relation - project(t))

    expected = sum(
        max(0.0, score(h, t) + 1.0 - score(h, n)) for (h, t), n in zip(queries, negatives)
    )
    actual = query_loss(task, meta, params, projections, 1.0).item()
    assert actual == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize(
    "l_q, l_c, weight, expected",
    [(0.4, math.log(2), 0.05, 0.434657), (0.4, 0.9, 0.0, 0.4), (0.0, 0.0, 0.05, 0.0)],
)
def test_total_loss(l_q, l_c, weight, expected):
    assert total_loss(Tensor(l_q), Tensor(l_c), weight).item() == pytest.approx(
        expected, abs=1e-6
    )


def test_total_loss_without_contrastive_is_query_loss():
    l_q = Tensor(0.4)
    assert total_loss(l_q, Tensor(5.0), 0.0) is l_q


def _smooth_task(rng, d=3, margin=10.0):
    """A TransE task where every hinge is active, so the loss is smooth in R."""
    entity = rng.normal(size=(8, d))
    params = dict(entity=Tensor(entity))
    task = _task([(0, 1), (2, 3)], [(4, 5), (6, 7)], [5, 7], [1, 3])
    return params, task, margin


def _outer_loss(params, task, margin, relation, order):
    meta = MetaRelation(relation)
    refined, _, _ = inner_update(task, meta, params, None, 0.5, margin=margin, order=order)
    return query_loss(task, refined, params, None, margin)


def test_full_order_gradient_matches_finite_differences(rng):
    params, task, margin = _smooth_task(rng)
    r0 = rng.normal(size=3)
    result = finite_diff_check(lambda x: _outer_loss(params, task, margin, x, "full"), r0)
    assert result.max_relative_error <= 1e-5
    analytic = Tensor(result.analytic)
    x = Tensor(r0, requires_grad=True)
    (first,) = grad(_outer_loss(params, task, margin, x, "first"), [x])
    assert not np.allclose(first.data, analytic.data, atol=1e-6)


def test_task_loss_terms(small_graph, tiny_params):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    out = task_loss(small_graph, task, tiny_params, SMALL, stream=("train", 1, 0))
    assert math.isfinite(out.total.item())
    assert out.contrastive.item() > 0
    assert out.total.item() == pytest.approx(
        out.query.item() + SMALL.contrastive_weight * out.contrastive.item()
    )
    grads = backward(out.total, inputs=list(tiny_params.tensors.values()))
    assert np.abs(grads[tiny_params["context.score"]].data).sum() > 0
    assert np.abs(grads[tiny_params["mlp.output.weight"]].data).sum() > 0


def test_task_loss_is_deterministic(small_graph, tiny_params):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    a = task_loss(small_graph, task, tiny_params, SMALL, stream=("train", 1, 0))
    b = task_loss(small_graph, task, tiny_params, SMALL, stream=("train", 1, 0))
    assert a.total.item() == b.total.item()


@pytest.mark.parametrize("ablation", ["no_mtransd", "no_mrl", "no_context"])
def test_ablations(small_graph, tiny_params, ablation):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    config = TrainConfig(**(vars(SMALL) | dict(ablations=(ablation,))))
    out = task_loss(small_graph, task, tiny_params, config, stream=("train", 1, 0))
    assert math.isfinite(out.total.item())
    if ablation == "no_context":
        assert out.contrastive.item() == 0
        assert out.total is out.query
    if ablation == "no_mtransd":
        meta, projections, _ = adapt(task, tiny_params, config)
        assert projections is None
        assert meta.projection is None


def test_full_order_task_loss(small_graph, tiny_params):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    config = TrainConfig(**(vars(SMALL) | dict(maml_order="full")))
    out = task_loss(small_graph, task, tiny_params, config, stream=("train", 1, 0))
    grads = backward(out.total, inputs=list(tiny_params.tensors.values()))
    assert all(np.isfinite(g.data).all() for g in grads.values())


def test_score_candidates(small_graph, tiny_params):
    (r,) = small_graph.splits["test"]
    task = build_task(small_graph, r, 3, None, 20, 0)
    meta, projections, _ = adapt(task, tiny_params, SMALL)
    head, tail = task.queries[0]
    scores = score_candidates(meta, tiny_params, projections, head, task.candidates[0])
    assert scores.shape == (len(task.candidates[0]),)
    assert (scores >= 0).all()


def _random_setup(rng, d=8, k=3, m=2):
    """Random parameters and a task whose query entities stay out of the inner step."""
    params = {
        name: Tensor(rng.normal(size=shape) * 0.3)
        for name, shape in parameter_shapes(16, 4, d).items()
    }
    for name in params:
        if name.endswith("gamma"):
            params[name] = Tensor(1.0 + 0.1 * rng.normal(size=params[name].shape))
    references = [(2 * i, 2 * i + 1) for i in range(k)]
    queries = [(9 + 2 * i, 10 + 2 * i) for i in range(m)]
    task = _task(references, queries, [6, 7, 8][:k], [13, 14, 15][:m])
    contexts = [
        TripletContext(
            Triplet(0, 0, 1),
            tuple((int(rng.integers(4)), int(rng.integers(16))) for _ in range(3)),
            corrupted,
        )
        for corrupted in (False, True)
    ]
    return params, task, contexts


def _first_order_total(params, task, contexts, margin=10.0):
    def f(entity):
        table = dict(params, entity=entity)
        meta = meta_representation(reference_matrix(table, task.references), table)
        projections = TaskProjections.for_references(table["projection"], task.references)
        refined, projections, _ = inner_update(
            task, meta, table, projections, 0.5, margin=margin, order="first"
        )
        l_q = query_loss(task, refined, table, projections, margin)
        batch = ContrastiveBatch(
            anchor_embedding(table, 0, 1),
            encode_context(contexts[0], table).vector,
            (encode_context(contexts[1], table).vector,),
        )
        return total_loss(l_q, contrastive_loss(batch), 0.05)

    return f


def test_total_loss_gradient_over_random_configurations(rng):
    # query rows do not enter the inner step, so first-order gradients are exact there
    query_rows = range(9, 16)
    for _ in range(100):
        params, task, contexts = _random_setup(rng)
        coordinates = [(int(rng.choice(query_rows)), int(rng.integers(8))) for _ in range(3)]
        result = finite_diff_check(
            _first_order_total(params, task, contexts),
            params["entity"].data,
            coordinates=coordinates,
        )
        assert result.max_relative_error <= 1e-4, result


def test_inner_step_decreases_reference_loss(rng):
    improved = total = 0
    while total < 200:
        params, task, _ = _random_setup(rng)
        table = dict(params)
        table["entity"].requires_grad_()
        table["projection"].requires_grad_()
        meta = meta_representation(reference_matrix(table, task.references), table)
        projections = TaskProjections.for_references(table["projection"], task.references)
        refined, refined_projections, before = inner_update(
            task, meta, table, projections, 1e-3
        )
        if before.item() == 0:
            continue
        total += 1
        after = reference_loss(task, refined, table, refined_projections, 1.0)
        improved += after.item() < before.item()
    assert improved >= 198


def test_candidates_read_the_shared_projection_table(small_graph, tiny_params, rng):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    meta, projections, _ = adapt(task, tiny_params, SMALL)
    moved = projections.with_local(Tensor(rng.normal(size=projections.local.shape)))
    head, _ = task.references[0]
    candidates = [t for _, t in task.references] + list(task.candidates[0])
    np.testing.assert_array_equal(
        score_candidates(meta, tiny_params, moved, head, candidates),
        score_candidates(meta, tiny_params, projections, head, candidates),
    )
    references_as_queries = _task(
        task.references, task.references, task.reference_negatives,
        task.reference_negatives,
    )
    assert query_loss(
        references_as_queries, meta, tiny_params, moved, SMALL.margin
    ).item() == query_loss(
        references_as_queries, meta, tiny_params, projections, SMALL.margin
    ).item()


def _touched_entities(g, task, config, stream):
    touched = {e for pair in task.references + task.queries for e in pair}
    touched |= set(task.reference_negatives) | set(task.query_negatives)
    for index, (h, t) in enumerate(task.references):
        ctx = build_context(g, Triplet(h, task.relation, t), config.neighbor_cap)
        if not ctx.tuples:
            continue
        false = synthesize_false_contexts(
            g, ctx, config.false_contexts, config.seed, stream=(*stream, index)
        )
        for c in (ctx, *false):
            touched |= {e for _, e in c.tuples}
    return touched


@pytest.mark.parametrize("maml_order", ["first", "full"])
def test_untouched_entities_get_no_gradient(small_graph, tiny_params, maml_order):
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    config = TrainConfig(**(vars(SMALL) | dict(maml_order=maml_order)))
    stream = ("train", 1, 0)
    out = task_loss(small_graph, task, tiny_params, config, stream=stream)
    entity, projection = tiny_params["entity"], tiny_params["projection"]
    grads = backward(out.total, inputs=[entity, projection])
    touched = _touched_entities(small_graph, task, config, stream)
    untouched = sorted(set(range(small_graph.num_entities)) - touched)
    assert untouched
    assert (grads[entity].data[untouched] == 0).all()
    assert (grads[projection].data[untouched] == 0).all()
    assert np.abs(grads[entity].data[sorted(touched)]).sum() > 0


def _random_store(g, rng, d):
    arrays = {
        name: rng.normal(size=shape) * 0.3
        for name, shape in parameter_shapes(g.num_entities, g.num_relation_ids, d).items()
    }
    for name in arrays:
        if name.endswith("gamma"):
            arrays[name] = 1.0 + 0.1 * arrays[name]
    return ParameterStore(arrays)


def test_every_parameter_gradient_with_full_order(small_graph, rng):
    # margin 10 keeps every hinge active
    config = TrainConfig(
        **(vars(SMALL) | dict(dim=4, maml_order="full", margin=10.0, inner_lr=0.5))
    )
    (r,) = small_graph.splits["train"]
    task = build_task(small_graph, r, 3, 4, 20, 0)
    store = _random_store(small_graph, rng, config.dim)
    stream = ("train", 1, 0)
    out = task_loss(small_graph, task, store, config, stream=stream, training=False)
    assert out.contrastive.item() > 0
    analytic = backward(out.total, inputs=list(store.tensors.values()))
    for name, tensor in store.items():

        def f(x, name=name):
            table = dict(store.items())
            table[name] = x
            loss = task_loss(small_graph, task, table, config, stream=stream, training=False)
            return loss.total

        flat = np.abs(analytic[tensor].data).ravel()
        assert flat.max() > 0, name
        coordinates = [
            np.unravel_index(i, tensor.shape) for i in np.argsort(flat)[-3:] if flat[i] > 0
        ]
        result = finite_diff_check(f, tensor.data, 1e-5, coordinates=coordinates)
        assert result.max_relative_error <= 1e-4, (name, result)
