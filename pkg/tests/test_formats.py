import struct

import numpy as np
import pytest

from piqbench.embedding import EmbeddingMatrix, read_embeddings, sidecar_path, write_embeddings
from piqbench.exceptions import FormatError, ParseError
from piqbench.metrics import EvaluationReport
from piqbench.report import read_predictions, report_from_json, report_to_json, write_predictions


def test_embedding_round_trip(tmp_path, rng):
    emb = EmbeddingMatrix(("a", "b", "c"), rng.normal(size=(3, 5)).astype(np.float32))
    write_embeddings(tmp_path / "e.piqe", emb)
    back = read_embeddings(tmp_path / "e.piqe")
    assert back.ids == emb.ids
    assert np.array_equal(back.values, emb.values)


def test_embedding_layout(tmp_path):
    emb = EmbeddingMatrix(("x",), np.array([[1.0, -2.0]], dtype=np.float32))
    path = tmp_path / "e.piqe"
    write_embeddings(path, emb)
    raw = path.read_bytes()
    assert raw[:4] == b"PIQE"
    assert struct.unpack("<IQI", raw[4:20]) == (1, 1, 2)
    assert struct.unpack("<2f", raw[20:]) == (1.0, -2.0)
    assert sidecar_path(path).read_text() == "image_id\nx\n"


@pytest.mark.parametrize("corrupt", [
    lambda raw: b"XXXX" + raw[4:],
    lambda raw: raw[:4] + struct.pack("<I", 2) + raw[8:],
    lambda raw: raw[:-1],
    lambda raw: raw[:10],
])
def test_embedding_corruption(tmp_path, corrupt):
    path = tmp_path / "e.piqe"
    write_embeddings(path, EmbeddingMatrix(("a", "b"), np.ones((2, 3), dtype=np.float32)))
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_embedding_sidecar_mismatch(tmp_path):
    path = tmp_path / "e.piqe"
    write_embeddings(path, EmbeddingMatrix(("a", "b"), np.ones((2, 3), dtype=np.float32)))
    sidecar_path(path).write_text("image_id\na\n")
    with pytest.raises(FormatError):
        read_embeddings(path)
    sidecar_path(path).unlink()
    with pytest.raises(FormatError):
        read_embeddings(path)


def test_report_json_tree_and_round_trip():
    r = EvaluationReport(0.3512345678, 0.536, 0.7, {"gender": 0.823, "age": 0.685, "physique": 0.444, "height": 0.65},
                         {"body": 0.561, "arm": 0.53}, 0.34)
    text = report_to_json(r)
    assert '"macro_map": 0.351235' in text
    import json

    tree = json.loads(text)
    assert list(tree) == ["reid", "appearance", "posture", "emotion", "piq"]
    assert list(tree["appearance"]) == ["gender", "age", "physique", "height", "score"]
    assert list(tree["posture"]) == ["body", "arm", "score"]
    back = report_from_json(text)
    assert report_to_json(back) == text
    assert abs(back.piq - r.piq) < 1e-6
    with pytest.raises(ParseError):
        report_from_json("{}")


def test_predictions_round_trip(tmp_path):
    preds = {"a": {"gender": (1,), "age": (0,), "physique": (2,), "height": (1,),
                   "body": (4,), "arm": (0,), "expression": (1, 3)}}
    write_predictions(tmp_path / "p.csv", preds)
    assert read_predictions(tmp_path / "p.csv") == preds
    (tmp_path / "bad.csv").write_text("image_id,gender\nx,1\n")
    with pytest.raises(ParseError):
        read_predictions(tmp_path / "bad.csv")
