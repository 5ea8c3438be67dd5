import json

import numpy as np
import pytest
from PIL import Image

from piqbench.cli import main
from piqbench.embedding import EmbeddingMatrix, read_embeddings, write_embeddings
from piqbench.synth import random_raster


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "d"
    assert main(["gen", "--out", str(out), "--noise", "0", "--unidentified", "4",
                 "--train-fraction", "0.3", "--seed", "7"]) == 0
    return out


def _evaluate(d, *extra):
    return main(["evaluate", "--annotations", str(d / "annotations.csv"), "--predictions", str(d / "predictions.csv"),
                 "--query", str(d / "query.piqe"), "--gallery", str(d / "gallery.piqe"),
                 "--split", str(d / "split.csv"), *extra])


def test_evaluate_perfect(dataset, capsys, caplog):
    assert _evaluate(dataset, "--threads", "2") == 0
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    assert report["reid"]["macro_map"] == 1.0 and report["reid"]["macro_rank1"] == 1.0
    assert report["piq"] == 1.0
    assert "without near-duplicate exclusion" in caplog.text


def test_evaluate_is_byte_stable(dataset, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _evaluate(dataset, "--out", str(a)) == 0
    assert _evaluate(dataset, "--out", str(b), "--threads", "3") == 0
    assert a.read_bytes() == b.read_bytes()


def test_evaluate_width_mismatch(dataset):
    q = read_embeddings(dataset / "query.piqe")
    write_embeddings(dataset / "query.piqe", EmbeddingMatrix(q.ids, np.hstack([q.values, q.values])))
    assert _evaluate(dataset) == 3


def test_evaluate_missing_file(dataset):
    (dataset / "gallery.piqe").unlink()
    assert _evaluate(dataset) == 3


def test_evaluate_validation_failure(dataset, capsys):
    text = (dataset / "annotations.csv").read_text().splitlines()
    fields = text[1].split(",")
    fields[2] = "9"
    text[1] = ",".join(fields)
    (dataset / "annotations.csv").write_text("\n".join(text) + "\n")
    assert _evaluate(dataset) == 2
    assert "label-range" in capsys.readouterr().err


def test_evaluate_with_groups(dataset, tmp_path, caplog):
    groups = tmp_path / "g.json"
    groups.write_text(json.dumps({"threshold": 10, "groups": {}}))
    assert _evaluate(dataset, "--groups", str(groups)) == 0
    assert "without" not in caplog.text


def test_gen_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["gen", "--out", str(tmp_path / name), "--seed", "3", "--pred-error", "0.2"]) == 0
    for f in ("annotations.csv", "split.csv", "embeddings.piqe", "predictions.csv", "query.piqe.ids.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_lts(tmp_path, capsys):
    counts = tmp_path / "c.csv"
    counts.write_text("label,count\n" + "".join(f"l{i},7\n" for i in range(5)))
    assert main(["lts", "--counts", str(counts), "--k", "0.2"]) == 0
    assert capsys.readouterr().out.strip() == "1.0"


def test_plan(capsys):
    assert main(["plan", "--dims", "16"]) == 0
    out = json.loads(capsys.readouterr().out)
    widths = [b - a for a, b in out["slots"].values()]
    assert widths == [1, 2, 2, 1, 1, 2, 2, 2, 3]
    assert out["views"]["reid"] == list(range(7))
    assert out["total_dims"] == 16


def test_plan_too_small(capsys):
    assert main(["plan", "--dims", "5"]) == 2


@pytest.mark.parametrize("loss", ["br", "triplet", "ce", "bce", "uncertainty"])
def test_losscheck(loss, capsys):
    assert main(["losscheck", "--loss", loss, "--n", "8", "--d", "16", "--seed", "1"]) == 0
    assert "ok" in capsys.readouterr().out


def test_phash_images_and_hashes(tmp_path, capsys, rng):
    imgs = tmp_path / "imgs"
    imgs.mkdir()
    a = random_raster(rng)
    Image.fromarray(a).save(imgs / "f1.png")
    Image.fromarray(a).save(imgs / "f2.png")
    Image.fromarray(random_raster(rng)).save(imgs / "f3.png")
    hashes = tmp_path / "h.csv"
    assert main(["phash", "--images", str(imgs), "--hash-out", str(hashes)]) == 0
    groups = json.loads(capsys.readouterr().out)
    assert groups["threshold"] == 10
    assert groups["groups"] == {"f1": 0, "f2": 0, "f3": 1}
    assert main(["phash", "--hashes", str(hashes), "--threshold", "0", "--prefilter"]) == 0
    assert json.loads(capsys.readouterr().out)["groups"] == {"f1": 0, "f2": 0, "f3": 1}


def test_sample(dataset, capsys):
    args = ["sample", "--strategy", "pk", "--annotations", str(dataset / "annotations.csv"),
            "--split", str(dataset / "split.csv"), "--batch-size", "8", "--P", "2", "--K", "2",
            "--epochs", "2", "--seed", "4"]
    assert main(args) == 0
    first = capsys.readouterr().out
    lines = [json.loads(line) for line in first.splitlines()]
    assert lines and all(len(b) == 4 for b in lines)
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert main(["sample", "--n", "10", "--batch-size", "4"]) == 0
    assert [len(json.loads(x)) for x in capsys.readouterr().out.splitlines()] == [4, 4, 2]
