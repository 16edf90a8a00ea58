import math
import subprocess
import sys

import numpy as np
import pytest

from fullmdn import autonet, cli, data, gmm

TINY = ["--epochs", "2", "--batch-size", "32", "--hidden", "8", "--quiet"]


def run(capsys, *argv):
    try:
        code = cli.main(list(argv))
    except SystemExit as exc:  # argparse usage errors
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    path = tmp_path / "train.csv"
    code, _, _ = run(capsys, "generate", "--gen", "rotating_gaussian", "--n", "200", "--seed", "1", "--out", str(path))
    assert code == 0
    return path


@pytest.fixture
def model(tmp_path, dataset, capsys):
    ckpt = tmp_path / "m.ckpt"
    code, _, _ = run(capsys, "train", "--data", str(dataset), "--k", "2", "--checkpoint", str(ckpt),
                     "--report", str(tmp_path / "r.json"), *TINY)
    assert code == 0
    return ckpt


# -- generate ---------------------------------------------------------------------------------------


def test_generate_to_stdout_and_summary_on_stderr(capsys):
    code, out, err = run(capsys, "generate", "--gen", "mixture_ring", "--n", "5", "--seed", "3", "--modes", "3")
    assert code == 0
    assert out.startswith("# mdn-dataset v1 N=2 M=1\n") and len(out.splitlines()) == 6
    assert err.strip() == "B=5 N=2 M=1 seed=3"
    assert data.loads_dataset(out).x.tobytes() == data.gen_mixture_ring(5, 3, modes=3).x.tobytes()


def test_generate_unknown_generator_lists_valid_names(capsys):
    code, _, err = run(capsys, "generate", "--gen", "bogus")
    assert code == 2
    assert "mixture_ring, rotating_gaussian, two_moons_conditional" in err


def test_generate_missing_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "generate")
    assert code == 2 and "--gen" in err


def test_unknown_flag_is_usage_error(capsys):
    assert run(capsys, "generate", "--gen", "mixture_ring", "--bogus", "1")[0] == 2


# -- train / eval -------------------------------------------------------------------------------------


def test_train_writes_checkpoint_and_report(tmp_path, dataset, capsys):
    ckpt, report = tmp_path / "a.ckpt", tmp_path / "a.json"
    code, out, err = run(capsys, "train", "--data", str(dataset), "--checkpoint", str(ckpt), "--report", str(report), *TINY)
    assert code == 0 and out.startswith("val_nll=") and err == ""
    params, cfg = autonet.load_checkpoint(ckpt)
    assert cfg.hidden == (8,) and cfg.K == 1
    assert '"val_nll"' in report.read_text()


def test_train_report_is_byte_identical_on_rerun(tmp_path, dataset, capsys):
    texts = []
    for tag in "ab":
        report = tmp_path / f"{tag}.json"
        run(capsys, "train", "--data", str(dataset), "--checkpoint", str(tmp_path / f"{tag}.ckpt"),
            "--report", str(report), "--seed", "5", *TINY)
        texts.append(report.read_bytes())
    assert texts[0] == texts[1]
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_eval_matches_final_validation_nll(tmp_path, capsys):
    train_csv, val_csv = tmp_path / "t.csv", tmp_path / "v.csv"
    run(capsys, "generate", "--gen", "rotating_gaussian", "--n", "150", "--seed", "1", "--out", str(train_csv))
    run(capsys, "generate", "--gen", "rotating_gaussian", "--n", "60", "--seed", "2", "--out", str(val_csv))
    code, out, _ = run(capsys, "train", "--data", str(train_csv), "--val", str(val_csv), "--checkpoint",
                       str(tmp_path / "m.ckpt"), "--report", str(tmp_path / "r.json"), *TINY)
    assert code == 0
    code, out2, _ = run(capsys, "eval", "--checkpoint", str(tmp_path / "m.ckpt"), "--data", str(val_csv))
    assert code == 0
    assert float(out.split("=")[1]) == float(out2.split("=")[1])


def test_zero_learning_rate_checkpoint_equals_init(tmp_path, dataset, capsys):
    ckpt = tmp_path / "z.ckpt"
    run(capsys, "train", "--data", str(dataset), "--lr", "0", "--seed", "9", "--checkpoint", str(ckpt),
        "--report", str(tmp_path / "z.json"), *TINY)
    params, cfg = autonet.load_checkpoint(ckpt)
    assert params.flat().tobytes() == autonet.init(cfg, 9).flat().tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_with_code_3(tmp_path, dataset, capsys):
    code, _, err = run(capsys, "train", "--data", str(dataset), "--lr", "1e300", "--epochs", "3",
                       "--clip-norm", "0", "--checkpoint", str(tmp_path / "d.ckpt"),
                       "--report", str(tmp_path / "d.json"), "--hidden", "8", "--quiet")
    assert code == 3 and "error:" in err


def test_malformed_dataset_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# mdn-dataset v1 N=2 M=1\n1,2\n")
    code, _, err = run(capsys, "train", "--data", str(bad))
    assert code == 2 and "line 2" in err


def test_eval_dimension_mismatch_exits_2(tmp_path, model, capsys):
    other = tmp_path / "o.csv"
    other.write_text("# mdn-dataset v1 N=3 M=1\n0,1,2,3\n")
    assert run(capsys, "eval", "--checkpoint", str(model), "--data", str(other))[0] == 2


# -- sample / density ------------------------------------------------------------------------------------


def test_sample_output_layout_and_reproducibility(model, capsys):
    code, out, _ = run(capsys, "sample", "--checkpoint", str(model), "--y", "0.5", "--count", "20", "--seed", "4")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "y1,x1,x2,component,eta1,eta2" and len(lines) == 21
    assert run(capsys, "sample", "--checkpoint", str(model), "--y", "0.5", "--count", "20", "--seed", "4")[1] == out
    # every row inverts back to its latent code
    params, cfg = autonet.load_checkpoint(model)
    mixture = autonet.forward([0.5], params, cfg)
    for row in lines[1:]:
        vals = row.split(",")
        x, i, eta = np.array(vals[1:3], float), int(vals[3]), np.array(vals[4:6], float)
        np.testing.assert_allclose(gmm.x_to_latent(x, mixture, i), eta, atol=1e-10)


def test_sample_forced_component(model, capsys):
    out = run(capsys, "sample", "--checkpoint", str(model), "--y", "0.5", "--count", "10", "--component", "1")[1]
    assert {row.split(",")[3] for row in out.splitlines()[1:]} == {"1"}


def test_sample_zero_count_writes_header_only(model, capsys):
    code, out, _ = run(capsys, "sample", "--checkpoint", str(model), "--y", "0.5", "--count", "0")
    assert code == 0 and out == "y1,x1,x2,component,eta1,eta2\n"


@pytest.mark.parametrize("extra", [["--component", "2"], ["--component", "-1"], ["--y", "0.1,0.2"]])
def test_sample_usage_errors(model, capsys, extra):
    argv = ["sample", "--checkpoint", str(model), "--y", "0.5", *extra]
    assert run(capsys, *argv)[0] == 2


def test_density_grid_mass_and_peak(model, capsys):
    code, out, err = run(capsys, "density", "--checkpoint", str(model), "--y", "1.0", "--step", "0.05")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "x1,x2,log_density" and len(lines) == 1 + 241 * 241
    mass = float(err.split("=")[1])
    assert abs(mass - 1.0) < 1e-3
    table = np.array([l.split(",") for l in lines[1:]], float)
    params, cfg = autonet.load_checkpoint(model)
    mixture = autonet.forward([1.0], params, cfg)
    best = table[np.argmax(table[:, 2])]
    assert best[2] == gmm.mixture_log_density(best[:2], mixture)


def test_density_needs_two_dimensional_model(tmp_path, capsys):
    cfg = autonet.MdnConfig(K=1, N=3, M=1, hidden=(4,))
    ckpt = tmp_path / "n3.ckpt"
    autonet.save_checkpoint(ckpt, autonet.init(cfg, 0), cfg)
    code, _, err = run(capsys, "density", "--checkpoint", str(ckpt), "--y", "0")
    assert code == 2 and "N=2" in err


# -- config files -------------------------------------------------------------------------------------------


def test_config_file_sets_defaults_and_flags_win(tmp_path, capsys):
    conf = tmp_path / "gen.conf"
    conf.write_text("# dataset\ngen=mixture_ring\nn=4\nseed=7\n")
    code, out, err = run(capsys, "generate", "--config", str(conf), "--n", "3")
    assert code == 0 and err.strip() == "B=3 N=2 M=1 seed=7"


def test_config_file_unknown_key(tmp_path, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("colour=blue\n")
    code, _, err = run(capsys, "generate", "--config", str(conf))
    assert code == 2 and "colour" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fullmdn", "generate", "--gen", "two_moons_conditional",
                           "--n", "3"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("# mdn-dataset v1 N=2 M=1")
