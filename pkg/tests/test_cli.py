import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from scratchattack.cli import main
from scratchattack.imageio import load_image, save_image
from scratchattack.toy import held_out_set

CONFIG = """
[attack]
name = "toy"
shape = "line"
scratches = 2
budget = 300
seed = 3

[de]
population = 20
iterations = 20
"""


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("imgs")
    x, y = held_out_set()
    rows = ["filename,label"]
    for i in range(4):
        save_image(x[i], d / f"img{i}.ppm")
        rows.append(f"img{i}.ppm,{y[i]}")
    (d / "labels.csv").write_text("\n".join(rows) + "\n")
    return d


@pytest.fixture(scope="module")
def run_dir(image_dir, tmp_path_factory):
    cfg = tmp_path_factory.mktemp("cfg") / "toy.toml"
    cfg.write_text(CONFIG)
    out = tmp_path_factory.mktemp("run")
    assert main(["attack", "--config", str(cfg), "--images", str(image_dir), "--out", str(out),
                 "--budget", "250", "--shape", "bezier"]) == 0
    return out


def test_attack_outputs(run_dir):
    assert (run_dir / "results.jsonl").is_file()
    assert (run_dir / "report.csv").read_text().splitlines()[0] == "Scratches,Success Rate,Queries,Coverage"
    assert len(list((run_dir / "adv").glob("*.ppm"))) == 4
    manifest = json.loads((run_dir / "manifest.json").read_text())
    # flags beat the file, the rest comes from the file
    assert manifest["config"]["budget"] == 250
    assert manifest["config"]["shape"] == "bezier"
    assert manifest["config"]["scratches"] == 2
    assert manifest["config"]["de"]["population"] == 20
    lines = (run_dir / "results.jsonl").read_text().splitlines()
    assert all(json.loads(l)["queries"] <= 250 for l in lines)


def test_attack_is_reproducible(run_dir, image_dir, tmp_path):
    cfg = tmp_path / "toy.toml"
    cfg.write_text(CONFIG)
    assert main(["attack", "--config", str(cfg), "--images", str(image_dir), "--out",
                 str(tmp_path / "again"), "--budget", "250", "--shape", "bezier"]) == 0
    assert (tmp_path / "again" / "results.jsonl").read_bytes() == (run_dir / "results.jsonl").read_bytes()
    a = json.loads((tmp_path / "again" / "manifest.json").read_text())
    b = json.loads((run_dir / "manifest.json").read_text())
    assert a["config_digest"] == b["config_digest"]


def test_missing_config(image_dir, tmp_path, capsys):
    code = main(["attack", "--config", str(tmp_path / "nope.toml"), "--images", str(image_dir),
                 "--out", str(tmp_path)])
    assert code == 2
    assert "nope.toml" in capsys.readouterr().err


def test_bad_config_key(image_dir, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[attack]\ncolour = 1\n")
    assert main(["attack", "--config", str(cfg), "--images", str(image_dir), "--out", str(tmp_path)]) == 2


def test_preset_flag(image_dir, tmp_path):
    out = tmp_path / "p"
    assert main(["attack", "--preset", "network-variable", "--images", str(image_dir), "--out",
                 str(out), "--population", "10", "--iterations", "5", "--budget", "60"]) == 0
    cfg = json.loads((out / "manifest.json").read_text())["config"]
    assert cfg["domain"] == "network" and cfg["budget"] == 60
    assert main(["attack", "--preset", "nope", "--images", str(image_dir), "--out", str(out)]) == 2


def test_defend(run_dir, image_dir, tmp_path):
    out = tmp_path / "d"
    assert main(["defend", "--results", str(run_dir / "results.jsonl"), "--defense", "jpeg",
                 "--quality", "90", "--benign", str(image_dir), "--out", str(out)]) == 0
    lines = (out / "recovery.csv").read_text().splitlines()
    assert lines[0] == "Method,Recovery Rate,Network Domain,Image Domain"
    assert lines[1].startswith('"JPEG, quality = 90"')
    assert (out / "accuracy.csv").is_file()


def test_defend_unknown(run_dir, tmp_path):
    assert main(["defend", "--results", str(run_dir / "results.jsonl"), "--defense", "blur",
                 "--out", str(tmp_path)]) == 2


def test_report(run_dir, tmp_path):
    assert main(["report", "--results", str(run_dir / "results.jsonl"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "report.csv").read_text() == (run_dir / "report.csv").read_text()
    assert (tmp_path / "source_target.csv").is_file()


def test_predict(image_dir, capsys):
    assert main(["predict", str(image_dir / "img0.ppm")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["probs"]) == 3


def test_backend_failure_exit_code(image_dir):
    import socket
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    assert main(["predict", str(image_dir / "img0.ppm"), "--remote", f"http://127.0.0.1:{port}"]) == 3


def test_network_domain_images_saved_raw(image_dir, tmp_path):
    out = tmp_path / "net"
    assert main(["attack", "--images", str(image_dir), "--out", str(out), "--domain", "network",
                 "--location", "fixed", "--optimizer", "cma", "--population", "10",
                 "--iterations", "2", "--budget", "20"]) == 0
    files = sorted((out / "adv").glob("*.scrt"))
    assert len(files) == 4
    assert load_image(files[0]).shape == (16, 16, 3)


flags = st.sampled_from(["attack", "defend", "report", "predict", "--config", "--images", "--out",
                         "--budget", "-1", "0", "abc", "--shape", "bezier", "--defense", "jpeg",
                         "--quality", "500", "--results", "/nonexistent", "--model", "toy",
                         "--domain", "network", "--objective", "caption", "--help-me"])


@settings(max_examples=60, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(argv=st.lists(flags, max_size=8))
def test_cli_total(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code = main(argv)
    assert isinstance(code, int)
