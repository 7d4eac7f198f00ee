import numpy as np
import pytest
from hirex.errors import CheckpointError
from hirex.params import (
    Checkpoint,
    ParameterStore,
    load_arrays,
    load_checkpoint,
    parameter_shapes,
    save_arrays,
    save_checkpoint,
)
from hirex.tensor import AdamState


def test_shapes_and_init(tiny_params, small_graph):
    shapes = parameter_shapes(small_graph.num_entities, small_graph.num_relation_ids, 8)
    assert set(tiny_params) == set(shapes)
    for name, shape in shapes.items():
        assert tiny_params[name].shape == shape
        assert tiny_params[name].requires_grad
    np.testing.assert_allclose(np.linalg.norm(tiny_params["entity"].data, axis=1), 1.0)
    np.testing.assert_array_equal(tiny_params["projection"].data, 0.0)


def test_same_seed_same_parameters():
    a = ParameterStore.initialize(5, 4, 3, 11)
    b = ParameterStore.initialize(5, 4, 3, 11)
    for name in a:
        assert a[name].data.tobytes() == b[name].data.tobytes()


def test_pretrained_tables():
    entity = np.full((5, 3), 0.5)
    store = ParameterStore.initialize(5, 4, 3, 0, entity=entity)
    np.testing.assert_array_equal(store["entity"].data, entity)
    with pytest.raises(ValueError):
        ParameterStore.initialize(5, 4, 3, 0, relation=np.zeros((2, 3)))


def test_snapshot_is_a_copy(tiny_params):
    snapshot = tiny_params.snapshot()
    tiny_params["entity"].data[0, 0] += 1
    assert snapshot["entity"][0, 0] != tiny_params["entity"].data[0, 0]


def test_checkpoint_round_trip(tiny_params, tmp_path):
    state = AdamState.for_params(tiny_params.tensors)
    state.step = 7
    checkpoint = Checkpoint(
        params=tiny_params.snapshot(),
        optimizer=state,
        step=20,
        history=[(10, 0.25), (20, 0.5)],
        config=dict(k=3),
        meta=dict(fingerprint="abc/full"),
    )
    save_checkpoint(checkpoint, tmp_path / "best.npz")
    loaded = load_checkpoint(tmp_path / "best.npz")
    assert loaded.step == 20
    assert loaded.history == [(10, 0.25), (20, 0.5)]
    assert loaded.best_mrr == 0.5
    assert loaded.optimizer.step == 7
    assert loaded.meta["fingerprint"] == "abc/full"
    for name, value in checkpoint.params.items():
        assert loaded.params[name].tobytes() == value.tobytes()


def test_archives_are_byte_identical(tmp_path):
    arrays = dict(b=np.arange(3.0), a=np.eye(2))
    save_arrays(tmp_path / "one.npz", arrays, dict(kind="x"))
    save_arrays(tmp_path / "two.npz", arrays, dict(kind="x"))
    assert (tmp_path / "one.npz").read_bytes() == (tmp_path / "two.npz").read_bytes()


def test_missing_tensor(tiny_params, tmp_path):
    params = tiny_params.snapshot()
    del params["hyper.weight"]
    save_checkpoint(Checkpoint(params=params), tmp_path / "broken.npz")
    with pytest.raises(CheckpointError, match="hyper.weight"):
        load_checkpoint(tmp_path / "broken.npz")


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "junk.npz")
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "missing.npz")
    save_arrays(tmp_path / "tables.npz", dict(entity=np.zeros((1, 1))), dict(kind="pretrained"))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "tables.npz")
