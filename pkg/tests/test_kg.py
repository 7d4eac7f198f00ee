import json
import pytest
from hirex.errors import (
    DataError,
    EmptyGraphError,
    MalformedLineError,
    UnknownEntityError,
)
from hirex.kg import KnowledgeGraph, detect_format, load_kg, neighbors, save_kg


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_single_tsv(tmp_path):
    g = load_kg(_write(tmp_path / "kg.tsv", "a\tr1\tb\nb\tr2\tc\n"))
    assert g.num_entities == 3
    assert g.num_relations == 2
    assert len(g.triplets) == 2
    assert g.num_relation_ids == 4
    assert g.relation_name(g.inverse(g.relations.id("r1"))) == "r1_inv"


def test_empty_file(tmp_path):
    with pytest.raises(EmptyGraphError, match="empty graph"):
        load_kg(_write(tmp_path / "kg.tsv", "\n"))


def test_malformed_line_number(tmp_path):
    with pytest.raises(MalformedLineError) as info:
        load_kg(_write(tmp_path / "kg.tsv", "a\tr\tb\na\tr\n"))
    assert info.value.line_number == 2
    assert info.value.exit_code == 2


def test_duplicates_dropped(tmp_path, caplog):
    g = load_kg(_write(tmp_path / "kg.tsv", "a\tr\tb\na\tr\tb\n"))
    assert len(g.triplets) == 1
    assert "duplicate" in caplog.text.lower()


def test_gmatching_json(tmp_path):
    _write(tmp_path / "path_graph", "".join(f"x{i}\tbg\ty{i}\n" for i in range(60)))
    tasks = {"rel": [[f"x{i}", "rel", f"y{(i + 1) % 60}"] for i in range(60)]}
    _write(tmp_path / "train_tasks.json", json.dumps(tasks))
    _write(tmp_path / "candidates.json", json.dumps({"x0 rel": ["y1", "y2", "y3"]}))
    g = load_kg(tmp_path, "gmatching-json")
    assert len(g.splits["train"]) == 1
    (relation,) = g.splits["train"]
    assert len(g.relation_triplets(relation)) == 60
    assert relation in g.few_shot
    key = (g.entities.id("x0"), relation)
    assert len(g.candidates[key]) == 3


def test_unknown_candidate_entity(tmp_path):
    _write(tmp_path / "path_graph", "a\tbg\tb\n")
    _write(tmp_path / "train_tasks.json", json.dumps({"rel": [["a", "rel", "b"]]}))
    _write(tmp_path / "candidates.json", json.dumps({"a rel": ["zzz"]}))
    with pytest.raises(UnknownEntityError):
        load_kg(tmp_path, "gmatching-json")


def test_triplet_under_wrong_relation(tmp_path):
    _write(tmp_path / "path_graph", "a\tbg\tb\n")
    _write(tmp_path / "train_tasks.json", json.dumps({"rel": [["a", "other", "b"]]}))
    with pytest.raises(DataError):
        load_kg(tmp_path, "gmatching-json")


def test_few_shot_relation_in_background():
    with pytest.raises(DataError):
        KnowledgeGraph([("a", "r", "b")], dict(train={"r": [("b", "r", "c")]}))


def test_missing_path(tmp_path):
    with pytest.raises(DataError):
        load_kg(tmp_path / "nothing")


@pytest.mark.parametrize("format", ["tsv", "gmatching-json"])
def test_save_and_load_preserve_graph(small_graph, tmp_path, format):
    save_kg(small_graph, tmp_path, format)
    assert load_kg(tmp_path, format) == small_graph


@pytest.mark.parametrize("format", ["tsv", "gmatching-json"])
def test_format_detected_from_files(small_graph, tmp_path, format):
    save_kg(small_graph, tmp_path, format)
    assert detect_format(tmp_path) == format
    assert load_kg(tmp_path) == small_graph


def test_single_file_is_tsv(tmp_path):
    _write(tmp_path / "path_graph", "a\tbg\tb\n")
    assert detect_format(tmp_path / "path_graph") == "tsv"
    assert detect_format(tmp_path / "nothing") == "tsv"


def test_neighbors_under_cap():
    g = KnowledgeGraph([("e", "r1", "t1"), ("e", "r2", "t2"), ("x", "r3", "y")])
    r1, r2 = g.relations.id("r1"), g.relations.id("r2")
    t1, t2 = g.entities.id("t1"), g.entities.id("t2")
    assert neighbors(g, g.entities.id("e"), 50) == [(r1, t1), (r2, t2)]


def test_neighbors_include_inverse_tuples():
    g = KnowledgeGraph([("a", "r", "b")])
    r = g.relations.id("r")
    assert neighbors(g, g.entities.id("b"), 50) == [(g.inverse(r), g.entities.id("a"))]


def test_neighbors_capped_and_reproducible():
    background = [("e", f"r{i % 4}", f"t{i}") for i in range(80)]
    g = KnowledgeGraph(background, seed=3)
    e = g.entities.id("e")
    first = neighbors(g, e, 50)
    assert len(first) == 50
    assert len(set(first)) == 50
    assert first == neighbors(KnowledgeGraph(background, seed=3), e, 50)
    assert first == sorted(first)


def test_neighbors_exclude_few_shot_triplets():
    g = KnowledgeGraph(
        [("a", "bg", "b")],
        dict(train={"fs": [("a", "fs", "c")]}),
    )
    assert all(r != g.relations.id("fs") for r, _ in neighbors(g, g.entities.id("a"), 9))
    assert neighbors(g, g.entities.id("c"), 9) == []


def test_unknown_entity_id():
    g = KnowledgeGraph([("a", "r", "b")])
    with pytest.raises(UnknownEntityError):
        neighbors(g, 99, 5)


def test_summary(small_graph):
    summary = small_graph.summary()
    assert summary["train_tasks"] == 1
    assert summary["train_triplets"] == 12
    assert summary["test_triplets"] == 8
    assert summary["relations"] == 6
