import math
import os
from pathlib import Path

import pytest

import depht

DATA = Path(os.environ.get("DEPHT_DATA_DIR", Path(__file__).resolve().parents[2] / "data"))


@pytest.fixture(scope="module")
def toy():
    sigs = depht.SignatureTable.load_file(str(DATA / "toy.sig"))
    data, errors = depht.load_corpus(str(DATA / "toy.txt"), sigs)
    assert errors == []
    return sigs, data


def test_parse_and_serialize(toy):
    sigs, _ = toy
    mr = depht.parse_mr("answer(river(traverse(stateid('texas'))))", sigs)
    assert len(mr) == 5
    assert str(mr) == "answer(river(traverse(stateid('texas'))))"
    assert mr.units()[0].startswith("QUERY:answer")
    with pytest.raises(depht.FunqlError):
        depht.parse_mr("answer(river(", sigs)


def test_tree_count(toy):
    sigs, _ = toy
    mr = depht.parse_mr("stateid('texas')", sigs)
    # WX, XW, and X at either token with the constant on a self-loop
    assert depht.count_trees("texas ?", mr, 1) == 4
    assert depht.count_trees("texas ?", mr, 0) == 2


def test_train_decode_roundtrip(toy, tmp_path):
    _, data = toy
    model = depht.Model.create(data, c=3, l2=0.01)
    trace = model.train(data)
    assert trace[-1] < trace[0]
    preds = [model.parse(inst.sentence) for inst in data]
    assert preds == [str(inst.gold) for inst in data]

    inst = data[0]
    lp = model.log_probability(inst)
    assert lp <= 0.0
    assert math.isfinite(model.log_partition(inst.sentence))
    best = model.decode(inst.sentence)
    assert best["mr"] == str(inst.gold)

    path = tmp_path / "toy.depht"
    model.save(str(path))
    again = depht.Model.load(str(path))
    assert again.parse(inst.sentence) == preds[0]
    assert again.num_features == model.num_features


def test_evaluate(toy):
    _, data = toy
    golds = [inst.gold for inst in data[:4]]
    scores = depht.evaluate([golds[0], None, golds[2], golds[0]], golds)
    assert scores["produced"] == 3
    assert scores["correct"] == 2
    assert scores["f1"] == pytest.approx(2 * (2 / 3) * 0.5 / (2 / 3 + 0.5))
    with pytest.raises(ValueError):
        depht.evaluate([None], golds)


def test_missing_corpus(toy):
    sigs, _ = toy
    with pytest.raises(depht.CorpusIOError):
        depht.load_corpus("/nonexistent/corpus.txt", sigs)
