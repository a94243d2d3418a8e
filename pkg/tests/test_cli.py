import json

import numpy as np
import pytest

from densadapt.cli import main, resolve_threads
from densadapt.errors import ConfigError
from densadapt.landmarks import read_landmarks, write_landmarks
from densadapt.objio import load_obj
from densadapt.optimizer import METRIC_COLUMNS
from densadapt.pipeline import corpus_from_synthetic

FAST = ["--template-subdivisions", "2", "--iters", "24", "--threads", "1"]


@pytest.fixture
def star(tmp_path):
    path = tmp_path / "star.obj"
    assert main(["make-synthetic", "spiky_star", "--param", "subdivisions=3", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return corpus_from_synthetic(str(tmp_path_factory.mktemp("corpus")), seeds=(0, 1), subdivisions=3)


def test_fit_outputs_and_echo(star, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["fit", "--target", str(star), "--out", str(out), "--m", "1.5", *FAST]) == 0
    fitted = load_obj(out / "fitted.obj")
    assert fitted.n_vertices == 162
    header = (out / "metrics.csv").read_text().splitlines()[0]
    assert header == ",".join(METRIC_COLUMNS)
    echo = json.loads((out / "config.json").read_text())
    assert echo["m"] == 1.5 and echo["lam"] == 19.0 and echo["iters"] == 24 and echo["command"] == "fit"


def test_rerun_from_echo_is_bitwise(star, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit", "--target", str(star), "--out", str(a), *FAST]) == 0
    assert main(["fit", "--config", str(a / "config.json"), "--out", str(b)]) == 0
    assert (a / "fitted.obj").read_bytes() == (b / "fitted.obj").read_bytes()


def test_fit_m_zero_runs_without_adaptation(star, tmp_path):
    out = tmp_path / "dr"
    assert main(["fit", "--target", str(star), "--out", str(out), "--m", "0", *FAST]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()[1:]
    cols = METRIC_COLUMNS.index("w_u"), METRIC_COLUMNS.index("w_k")
    assert all(float(r.split(",")[c]) == 0.0 for r in rows for c in cols)


def test_fit_with_landmark_files(star, tmp_path):
    from densadapt.landmarks import LandmarkSet

    write_landmarks(tmp_path / "tl.txt", LandmarkSet(np.zeros((3, 3)), indices=[0, 4, 9]))
    write_landmarks(tmp_path / "gl.txt", LandmarkSet(np.eye(3) * 1.4))
    out = tmp_path / "lm"
    rc = main(["fit", "--target", str(star), "--out", str(out), "--template-landmarks", str(tmp_path / "tl.txt"),
               "--target-landmarks", str(tmp_path / "gl.txt"), *FAST])
    assert rc == 0
    write_landmarks(tmp_path / "gl2.txt", LandmarkSet(np.eye(2, 3)))
    rc = main(["fit", "--target", str(star), "--out", str(out), "--template-landmarks", str(tmp_path / "tl.txt"),
               "--target-landmarks", str(tmp_path / "gl2.txt"), *FAST])
    assert rc == 2


def test_missing_target_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "bunny.obj"
    assert main(["fit", "--target", str(missing), "--out", str(tmp_path)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_config_value_exit_2(star, tmp_path):
    assert main(["fit", "--target", str(star), "--out", str(tmp_path), "--lambda", "-3"]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["fit"])
    assert info.value.code == 2


def test_numerical_failure_exit_1(star, tmp_path, monkeypatch):
    from densadapt import data_terms

    monkeypatch.setattr(data_terms, "chamfer_loss", lambda p, corr, eps=1e-12: (float("inf"), p * 0))
    assert main(["fit", "--target", str(star), "--out", str(tmp_path), *FAST]) == 1


def test_register_full(corpus, tmp_path):
    out = tmp_path / "reg"
    assert main(["register", "--manifest", corpus, "--out", str(out), *FAST]) == 0
    base = corpus.rsplit("/", 1)[0]
    fitted = [load_obj(f"{base}/fitted/face{s}.obj") for s in (0, 1)]
    assert np.array_equal(fitted[0].faces, fitted[1].faces)
    lm = read_landmarks(out / "template_landmarks.txt")
    assert len(lm) == 38 and lm.indices.max() < 162
    assert lm.header["reference fitting"].endswith("face0.obj")
    assert lm.header["anchor index"] == "16"
    assert (out / "stage3_face1_metrics.csv").exists()


def test_register_skip_landmarks(corpus, tmp_path):
    out = tmp_path / "reg1"
    assert main(["register", "--manifest", corpus, "--out", str(out), "--skip-landmarks", *FAST]) == 0
    assert (out / "stage1_face0.obj").exists()
    assert not (out / "template_landmarks.txt").exists()
    assert not list(out.glob("stage3_*"))


def test_register_mismatched_counts(corpus, tmp_path, capsys):
    base = corpus.rsplit("/", 1)[0]
    short = tmp_path / "short.txt"
    short.write_text("".join(open(f"{base}/face1_lmk.txt").readlines()[:-1]))
    manifest = tmp_path / "m.txt"
    manifest.write_text(
        f"{base}/face0.obj {base}/face0_lmk.txt {tmp_path}/a.obj\n{base}/face1.obj {short} {tmp_path}/b.obj\n"
    )
    assert main(["register", "--manifest", str(manifest), "--out", str(tmp_path / "o"), *FAST]) == 2
    assert "face1.obj" in capsys.readouterr().err


def test_resample_landmarks_command(corpus, tmp_path):
    out = tmp_path / "reg"
    assert main(["register", "--manifest", corpus, "--out", str(out), "--skip-landmarks", *FAST]) == 0
    dest = tmp_path / "lm.txt"
    assert main(["resample-landmarks", "--manifest", corpus, "--template-subdivisions", "2", "--out", str(dest)]) == 0
    lm = read_landmarks(dest)
    assert len(lm) == 38 and "reference fitting" in lm.header


def test_eval_json(star, tmp_path, capsys):
    out = tmp_path / "e.json"
    assert main(["eval", str(star), str(star), "--samples", "2000", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["chamfer"] < 1e-9 and res["normal_mse"] < 1e-12
    assert json.loads(capsys.readouterr().out)["samples"] == 2000


def test_eval_weight_file(star, tmp_path):
    w = tmp_path / "w.txt"
    np.savetxt(w, np.ones(642))
    assert main(["eval", str(star), str(star), "--samples", "500", "--weights", str(w)]) == 0
    assert main(["eval", str(star), str(star), "--weights", str(tmp_path / "none.txt")]) == 2


def test_gradcheck_pass_and_corrupt(capsys):
    assert main(["gradcheck", "--sizes", "40", "--threads", "1"]) == 0
    assert main(["gradcheck", "--sizes", "40", "--energies", "landmark", "--corrupt", "landmark"]) == 1
    err = capsys.readouterr().err
    assert "landmark" in err and "vertex 20" in err


def test_make_synthetic_deterministic(tmp_path):
    for name in ("a", "b"):
        rc = main(["make-synthetic", "face_blob", "--seed", "4", "--param", "subdivisions=2",
                   "--out", str(tmp_path / f"{name}.obj"), "--landmarks", str(tmp_path / f"{name}.txt")])
        assert rc == 0
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()
    assert len(read_landmarks(tmp_path / "a.txt")) == 38
    assert main(["make-synthetic", "sphere", "--param", "bogus=1", "--out", str(tmp_path / "c.obj")]) == 2


def test_threads_resolution(monkeypatch):
    monkeypatch.delenv("DENSADAPT_THREADS", raising=False)
    assert resolve_threads(3) == 3
    assert resolve_threads(None) >= 1
    monkeypatch.setenv("DENSADAPT_THREADS", "2")
    assert resolve_threads(5) == 2
    monkeypatch.setenv("DENSADAPT_THREADS", "lots")
    with pytest.raises(ConfigError):
        resolve_threads(1)
