import json

import numpy as np
import pytest
from PIL import Image

from favex import feature_scores, BoundMethod, save_model
from favex.cli import main

from conftest import FIXTURE_DIR, identity_net


@pytest.fixture()
def identity_files(tmp_path):
    model = tmp_path / "identity.json"
    save_model(identity_net(), model)
    xpath = tmp_path / "x.json"
    xpath.write_text("[1.0, 0.0]")
    return str(model), str(xpath)


def test_verify_robust_exit_zero(identity_files, capsys):
    model, x = identity_files
    code = main(["verify", "--model", model, "--input", x, "--epsilon", "0.3"])
    assert code == 0
    assert capsys.readouterr().out.strip() == "verified"


def test_verify_counterexample_exit_one(identity_files, capsys):
    model, x = identity_files
    code = main(["verify", "--model", model, "--input", x, "--epsilon", "0.6"])
    assert code == 1
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "counterexample"
    payload = json.loads(out[1])
    assert payload["predicted"] != 0
    w = np.asarray(payload["witness"])
    assert np.max(np.abs(w - [1.0, 0.0])) <= 0.6 + 1e-9


def test_verify_empty_active_trivially_verified(identity_files, capsys):
    model, x = identity_files
    code = main(
        ["verify", "--model", model, "--input", x, "--epsilon", "0.6",
         "--active", "none"]
    )
    assert code == 0
    assert capsys.readouterr().out.strip() == "verified"


def test_zero_epsilon_is_config_error(identity_files, capsys):
    model, x = identity_files
    code = main(["verify", "--model", model, "--input", x, "--epsilon", "0"])
    assert code == 2
    assert "--epsilon" in capsys.readouterr().err


def test_missing_model_is_model_error(tmp_path, capsys):
    xpath = tmp_path / "x.json"
    xpath.write_text("[0.1, 0.2]")
    code = main(
        ["verify", "--model", str(tmp_path / "nope.json"), "--input", str(xpath),
         "--epsilon", "0.1"]
    )
    assert code == 3


def test_unknown_traversal_is_config_error(identity_files):
    model, x = identity_files
    code = main(
        ["traverse", "--model", model, "--input", x, "--epsilon", "0.1",
         "--traversal", "bogus"]
    )
    assert code == 2


def test_traverse_index_order(identity_files, capsys):
    model, x = identity_files
    code = main(
        ["traverse", "--model", model, "--input", x, "--epsilon", "0.1",
         "--traversal", "index-order"]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["order"] == [0, 1]


def test_traverse_scores_match_bounds_module(identity_files, capsys):
    model, x = identity_files
    code = main(
        ["traverse", "--model", model, "--input", x, "--epsilon", "0.1",
         "--traversal", "favex-ibp"]
    )
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    expected = feature_scores(identity_net(), [1.0, 0.0], 0.1, BoundMethod.IBP)
    assert doc["scores"] == expected.tolist()


def test_explain_writes_valid_json(identity_files, tmp_path, capsys):
    model, x = identity_files
    out = tmp_path / "expl.json"
    code = main(
        ["explain", "--model", model, "--input", x, "--epsilon", "0.3",
         "--timeout", "5", "--out", str(out)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    parts = [set(doc["invariants"]), set(doc["unknowns"]), set(doc["counterfactuals"])]
    assert set().union(*parts) == {0, 1}
    assert sum(len(p) for p in parts) == 2
    summary = capsys.readouterr().err
    assert "|C|=" in summary and "queries=" in summary


def test_explain_bad_shape_is_config_error(identity_files, tmp_path):
    model, x = identity_files
    code = main(
        ["explain", "--model", model, "--input", x, "--epsilon", "0.3",
         "--heatmap", str(tmp_path / "h.png"), "--shape", "3x4"]
    )
    assert code == 2


needs_fixture = pytest.mark.skipif(
    not FIXTURE_DIR.exists(), reason="fixture bundle not generated"
)


@pytest.fixture(scope="module")
def fixture_input(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    inputs = json.loads((FIXTURE_DIR / "inputs.json").read_text())
    xpath = tmp / "digit.json"
    xpath.write_text(json.dumps(inputs[0]))
    return str(FIXTURE_DIR / "model.json"), str(xpath), tmp


@needs_fixture
def test_explain_fixture_v_optimal(fixture_input):
    model, x, tmp = fixture_input
    out = tmp / "expl.json"
    code = main(
        ["explain", "--model", model, "--input", x, "--epsilon", "0.05",
         "--timeout", "5", "--mode", "v-optimal", "--strategy", "favex",
         "--out", str(out)]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    parts = [set(doc["invariants"]), set(doc["unknowns"]), set(doc["counterfactuals"])]
    assert set().union(*parts) == set(range(64))
    assert sum(len(p) for p in parts) == 64
    assert set(doc["witnesses"]) == {str(i) for i in doc["counterfactuals"]}


@needs_fixture
def test_explain_heatmap_band_counts(fixture_input):
    model, x, tmp = fixture_input
    out = tmp / "expl2.json"
    png = tmp / "heat.png"
    code = main(
        ["explain", "--model", model, "--input", x, "--epsilon", "0.1",
         "--timeout", "5", "--out", str(out), "--heatmap", str(png),
         "--shape", "8x8"]
    )
    assert code == 0
    doc = json.loads(out.read_text())
    img = np.asarray(Image.open(png))
    assert img.shape == (8, 8)
    assert img.dtype == np.uint8
    assert (img == 255).sum() == len(doc["counterfactuals"])
    assert (img == 128).sum() == len(doc["unknowns"])
    assert (img == 0).sum() == len(doc["invariants"])


@needs_fixture
def test_explain_input_dir_sweep(fixture_input, tmp_path):
    model, x, _ = fixture_input
    src = tmp_path / "inputs"
    src.mkdir()
    inputs = json.loads((FIXTURE_DIR / "inputs.json").read_text())
    for i in range(2):
        (src / f"img{i}.json").write_text(json.dumps(inputs[i]))
    out = tmp_path / "out"
    code = main(
        ["explain", "--model", model, "--input-dir", str(src),
         "--epsilon", "0.05", "--timeout", "5", "--out", str(out)]
    )
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == ["img0.explanation.json", "img1.explanation.json"]
    # exactly one input source must be given
    assert main(
        ["explain", "--model", model, "--input", x, "--input-dir", str(src),
         "--epsilon", "0.05"]
    ) == 2


@needs_fixture
def test_explain_deterministic_bytes(fixture_input):
    model, x, tmp = fixture_input
    out1 = tmp / "d1.json"
    out2 = tmp / "d2.json"
    flags = ["explain", "--model", model, "--input", x, "--epsilon", "0.1",
             "--timeout", "5", "--seed", "17"]
    assert main(flags + ["--out", str(out1)]) == 0
    assert main(flags + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
