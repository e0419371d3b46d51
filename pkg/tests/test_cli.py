import json
import math

import numpy as np
import pytest

from landscape_hessian import cli, data, hessian, io, nn

BLOBS = "blobs:300,6,3,0.2"


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_rows(path):
    lines = path.read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    header = body[0].split(",")
    return header, [list(map(float, l.split(","))) for l in body[1:]], [l for l in lines if l.startswith("#")]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--dataset", BLOBS, "--hidden", 6, "--layers", 3, "--epochs", 3, "--out", out) == 0
    return out


@pytest.fixture(scope="module")
def trained_bias_free(tmp_path_factory):
    out = tmp_path_factory.mktemp("train_nb")
    assert run("train", "--dataset", BLOBS, "--hidden", 6, "--layers", 2, "--epochs", 3, "--no-bias",
               "--out", out) == 0
    return out


# io

def test_params_round_trip_is_bit_exact(tmp_path, rng):
    config = nn.MlpConfig(3, 4, 3, 2)
    params = nn.init_params(config, 1)
    params.biases = [rng.normal(size=b.shape) for b in params.biases]
    io.save_params(params, tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:4] == b"LSHP"
    back = io.load_params(tmp_path / "p.bin")
    assert back.config == config
    assert back.flatten().tobytes() == params.flatten().tobytes()


@pytest.mark.parametrize("mutate", [
    lambda raw: raw[:10],
    lambda raw: b"XXXX" + raw[4:],
    lambda raw: raw[:-8],
    lambda raw: raw[:4] + (9).to_bytes(4, "little") + raw[8:],
])
def test_params_file_corruption_detected(tmp_path, mutate):
    io.save_params(nn.init_params(nn.MlpConfig(2, 2, 2, 2), 0), tmp_path / "p.bin")
    (tmp_path / "p.bin").write_bytes(mutate((tmp_path / "p.bin").read_bytes()))
    with pytest.raises(io.ParamsFormatError):
        io.load_params(tmp_path / "p.bin")


def test_number_format():
    assert io.fmt(0.1) == "0.10000000000000001"
    assert io.fmt(3) == "3" and io.fmt(np.int64(4)) == "4" and io.fmt(True) == "1"
    assert float(io.fmt(math.pi)) == math.pi


def test_csv_layout(tmp_path):
    io.write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 0.5)], comments=["c=1"], trailer=["t=2"])
    assert (tmp_path / "x.csv").read_bytes() == b"# c=1\na,b\n1,0.5\n#t=2\n"


# exit codes

def test_missing_dataset_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as info:
        run("train", "--out", tmp_path)
    assert info.value.code == cli.EXIT_USAGE
    assert "usage" in capsys.readouterr().err


def test_unknown_dataset_kind_is_usage_error(tmp_path):
    assert run("train", "--dataset", "mnist:foo", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("train", "--dataset", "blobs:1,2", "--out", tmp_path) == cli.EXIT_USAGE


def test_missing_files_are_data_errors(tmp_path):
    assert run("train", "--dataset", f"idx:{tmp_path}/a,{tmp_path}/b", "--out", tmp_path) == cli.EXIT_DATA
    assert run("converge", "--dataset", BLOBS, "--params", tmp_path / "none.bin", "--out", tmp_path / "c.csv") \
        == cli.EXIT_DATA


def test_params_dataset_mismatch_is_data_error(trained, tmp_path):
    assert run("converge", "--dataset", "blobs:300,5,3,0.2", "--params", trained / "params.bin",
               "--out", tmp_path / "c.csv") == cli.EXIT_DATA


# train

def test_train_outputs(trained):
    params = io.load_params(trained / "params.bin")
    assert params.config == nn.MlpConfig(6, 6, 3, 3, True)
    header, rows, comments = read_rows(trained / "train_report.csv")
    assert header == ["epoch", "loss", "accuracy"] and len(rows) == 3
    assert any(c.startswith("# gradient_norm=") for c in comments)
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["parameters"]["train"]["epochs"] == 3
    assert manifest["dataset"]["spec"] == BLOBS and len(manifest["dataset"]["sha256"]) == 64
    assert "wall_clock_seconds" in manifest and manifest["version"]


def test_train_from_feature_table(tmp_path):
    ds = data.synthetic_blobs(60, 3, 2, 0.2, seed=0)
    data.write_feature_table(ds, tmp_path / "t.csv")
    assert run("train", "--dataset", f"table:{tmp_path / 't.csv'}", "--classes", 2, "--hidden", 3, "--layers", 2,
               "--epochs", 1, "--out", tmp_path / "out") == 0
    assert io.load_params(tmp_path / "out" / "params.bin").config.input_dim == 3


# converge

def test_converge_csv(trained, tmp_path):
    out = tmp_path / "curve.csv"
    assert run("converge", "--dataset", BLOBS, "--params", trained / "params.bin", "--reps", 10,
               "--out", out) == 0
    header, rows, trailer = read_rows(out)
    assert header == ["k", "mean_abs_diff", "ema", "lemma2_bound_R0"]
    rows = np.array(rows)
    np.testing.assert_array_equal(rows[:, 0], np.arange(1, 300))
    assert np.all(rows[:, 1] <= rows[:, 3])
    assert len(trailer) == 1 and trailer[0].startswith("#slope=") and "k_min=30,k_max=299" in trailer[0]
    assert (tmp_path / "curve.csv.manifest.json").exists()


def test_converge_single_rep_raw(trained, tmp_path):
    out = tmp_path / "raw.csv"
    assert run("converge", "--dataset", BLOBS, "--params", trained / "params.bin", "--reps", 1, "--ema", 0,
               "--out", out) == 0
    _, rows, _ = read_rows(out)
    rows = np.array(rows)
    np.testing.assert_array_equal(rows[:, 1], rows[:, 2])


def test_converge_bound_violation_exit_code(trained, tmp_path, monkeypatch):
    monkeypatch.setattr(cli.landscape, "lemma2_bound", lambda k, c, r: np.zeros(np.shape(k)))
    assert run("converge", "--dataset", BLOBS, "--params", trained / "params.bin", "--reps", 2,
               "--out", tmp_path / "c.csv") == cli.EXIT_VIOLATION


# bound-check

def test_bound_check_random_net(tmp_path):
    out = tmp_path / "b.csv"
    assert run("bound-check", "--dataset", "blobs:100,4,4,0.3", "--hidden", 4, "--layers", 3, "--out", out) == 0
    header, rows, comments = read_rows(out)
    assert header == ["index", "gn_spectral_norm", "layerwise_bound", "theorem1_bound", "lemma1_bound"]
    assert len(rows) == 100
    assert any(c.startswith("# m_h=") for c in comments)
    for _, gn, lw, th, _ in rows:
        assert gn <= lw * (1 + 1e-9) and lw <= th * (1 + 1e-9)


def test_bound_check_trained_bias_free(trained_bias_free, tmp_path):
    assert run("bound-check", "--dataset", BLOBS, "--params", trained_bias_free / "params.bin",
               "--out", tmp_path / "b.csv") == 0


def test_bound_check_refuses_biased_model(trained, tmp_path, capsys):
    code = run("bound-check", "--dataset", BLOBS, "--params", trained / "params.bin", "--out", tmp_path / "b.csv")
    assert code == cli.EXIT_DATA
    assert "without bias terms" in capsys.readouterr().err


def test_bound_check_needs_a_model(tmp_path):
    assert run("bound-check", "--dataset", BLOBS, "--out", tmp_path / "b.csv") == cli.EXIT_USAGE


def test_bound_check_single_layer_header(tmp_path):
    # one object at unit norm, a 2x2 orthogonal weight: m_w = m_x = 1
    table = tmp_path / "t.csv"
    table.write_text("label,a,b\n0,0.6,0.8\n")
    config = nn.MlpConfig(2, 2, 1, 2, bias=False)
    io.save_params(nn.MlpParams(config, [np.array([[0.0, 1.0], [1.0, 0.0]])], [np.zeros(2)]), tmp_path / "p.bin")
    out = tmp_path / "b.csv"
    assert run("bound-check", "--dataset", f"table:{table}", "--classes", 2, "--params", tmp_path / "p.bin",
               "--out", out) == 0
    _, rows, _ = read_rows(out)
    assert rows[0][3] == pytest.approx(2 * math.sqrt(2), rel=1e-12)


def test_chain_violation_reports_first_broken_link():
    assert cli.chain_violation((0, 2.0, 1.0, 3.0, 4.0), True) == "gn_spectral_norm > layerwise_bound"
    assert cli.chain_violation((0, 1.0, 3.0, 2.0, 4.0), True) == "layerwise_bound > theorem1_bound"
    assert cli.chain_violation((0, 1.0, 2.0, 5.0, 4.0), True) == "theorem1_bound > lemma1_bound"
    assert cli.chain_violation((0, 1.0, 2.0, 5.0, 4.0), False) is None
    assert cli.chain_violation((0, 1.0, 1.0 + 1e-12, 1.0, 1.0), True) is None


def test_bound_check_violation_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli.hessian, "gn_spectral_norm", lambda gn: 1e300)
    assert run("bound-check", "--dataset", "blobs:20,3,3,0.3", "--hidden", 3, "--layers", 2,
               "--out", tmp_path / "b.csv") == cli.EXIT_VIOLATION


# verify

def test_verify_passes(tmp_path, capsys):
    assert run("verify", "--out", tmp_path / "v.txt") == 0
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert len(lines) == 8 and all(" PASS " in l for l in lines)


def test_verify_catches_sign_flip_in_logit_hessian(monkeypatch, capsys):
    original = hessian.logit_hessian
    monkeypatch.setattr(hessian, "logit_hessian", lambda p: -original(p))
    assert run("verify") == cli.EXIT_VIOLATION
    out = capsys.readouterr().out
    assert "FAIL logit_hessian_vs_central_differences" in out


# taylor

def test_taylor_csv(trained, tmp_path):
    out = tmp_path / "t.csv"
    assert run("taylor", "--dataset", BLOBS, "--params", trained / "params.bin", "--radius", "0,0.01,0.005",
               "--probes", 4, "--k", 50, "--out", out) == 0
    header, rows, comments = read_rows(out)
    assert header == ["radius", "probe", "true_loss", "model_loss", "abs_error", "gradient_term"]
    rows = np.array(rows)
    assert rows.shape == (12, 6)
    assert np.all(rows[rows[:, 0] == 0, 4] == 0)
    err = [rows[rows[:, 0] == r, 4].max() for r in (0.01, 0.005)]
    assert err[1] <= err[0]
    assert any(c.startswith("# gradient_norm=") for c in comments)


def test_taylor_bad_radius_list(trained, tmp_path):
    with pytest.raises(SystemExit) as info:
        run("taylor", "--dataset", BLOBS, "--params", trained / "params.bin", "--radius", "a,b",
            "--out", tmp_path / "t.csv")
    assert info.value.code == cli.EXIT_USAGE
