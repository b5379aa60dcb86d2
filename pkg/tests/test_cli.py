import json
import subprocess
import sys

import pytest

from difflab import cli

SIM_CONFIGS = ("mask_forward", "mask_reverse", "gauss_forward", "gauss_reverse")


def _cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def test_verify_writes_the_check_schema(tmp_path, capsys):
    out = tmp_path / "cat.json"
    assert cli.main(["verify", "--suite", "categorical", "--json", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["suite"] == "categorical" and rep["checks"]
    for c in rep["checks"]:
        assert set(c) == {"name", "status", "measured", "tolerance"} and c["status"] == "pass"
    assert "checks passed" in capsys.readouterr().out


def _exit_code(argv):
    try:
        return cli.main(argv)
    except SystemExit as exc:
        return exc.code


def test_usage_errors_exit_2(capsys):
    for argv in (["verify", "--suite", "nope"], ["simulate"], ["frobnicate"], ["verify", "--jobs", "0"],
                 ["verify", "--seed", "-1"]):
        assert _exit_code(argv) == 2, argv


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = str(tmp_path / "nowhere.json")
    assert cli.main(["simulate", "--config", missing]) == 2
    assert missing in capsys.readouterr().err
    assert cli.main(["train", "--config", "builtin:does_not_exist"]) == 2


def test_config_validation(tmp_path, capsys):
    base = {"space": "continuous", "direction": "forward", "x0": 0.5, "steps": 64, "paths": 100}
    assert cli.main(["simulate", "--config", _cfg(tmp_path, dict(base, colour="red"))]) == 2
    assert "colour" in capsys.readouterr().err
    assert cli.main(["simulate", "--config", _cfg(tmp_path, dict(base, steps=0))]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["likelihood", "--config", str(bad)]) == 2


def test_configs_lists_bundled_files(capsys):
    assert cli.main(["configs"]) == 0
    names = capsys.readouterr().out.split()
    assert "builtin:toy_train" in names and all(n.startswith("builtin:") for n in names)


@pytest.mark.parametrize("name", SIM_CONFIGS)
def test_simulate_is_byte_reproducible(name, tmp_path, monkeypatch):
    runs = []
    for jobs in ("1", "3"):
        work = tmp_path / f"jobs{jobs}"
        work.mkdir()
        monkeypatch.chdir(work)  # bundled configs write traces relative to the working directory
        assert cli.main(["simulate", "--config", f"builtin:{name}", "--json", "summary.json", "--jobs", jobs]) == 0
        runs.append({p.name: p.read_bytes() for p in work.iterdir()})
    assert len(runs[0]) == 2 and runs[0] == runs[1]
    a = work / "summary.json"
    summary = json.loads(a.read_text())
    assert all(c["status"] == "pass" for c in summary["checks"])


def test_seed_override_changes_the_run(tmp_path):
    path = _cfg(tmp_path, {"space": "continuous", "direction": "forward", "x0": 0.5, "steps": 32, "paths": 500})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    cli.main(["simulate", "--config", path, "--json", str(a), "--seed", "1"])
    cli.main(["simulate", "--config", path, "--json", str(b), "--seed", "2"])
    assert a.read_bytes() != b.read_bytes()


def test_train_is_reproducible(tmp_path):
    obj = {"dims": 2, "kernel": {"kind": "mask", "K": 2}, "q_data": [[1, 0], [0, 1]],
           "epochs": 15, "bins": 4,
           "outputs": {"report": str(tmp_path / "r.json"), "model": str(tmp_path / "m.json")}}
    path = _cfg(tmp_path, obj)
    cli.main(["train", "--config", path])
    first = (tmp_path / "r.json").read_bytes(), (tmp_path / "m.json").read_bytes()
    cli.main(["train", "--config", path, "--jobs", "2"])
    assert first == ((tmp_path / "r.json").read_bytes(), (tmp_path / "m.json").read_bytes())
    rep = json.loads(first[0])
    assert {"loss_curve", "final_tv", "elbo_gap", "seed", "checks"} <= set(rep)
    assert cli.main(["train", "--config", _cfg(tmp_path, dict(obj, q_data=[[1, 0]]), "bad.json")]) == 2


def test_likelihood_csv(tmp_path, capsys):
    obj = {"data": {"weights": [0.4, 0.6], "means": [-1, 1], "variances": [0.3, 0.5]},
           "points": [-1.0, 0.0, 2.0], "steps": 256}
    assert cli.main(["likelihood", "--config", _cfg(tmp_path, obj)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "x,loglik,analytic,abs_error" and len(lines) == 4
    assert max(float(r.split(",")[3]) for r in lines[1:]) <= 1e-3


def test_report_kinds(tmp_path, capsys):
    for obj, head in (({"kind": "schedule", "grid": 5}, "family,t,alpha,sigma2,dalpha,jump_clock"),
                      ({"kind": "transition", "kernel": {"kind": "uniform", "K": 3}, "alpha": 0.3}, None),
                      ({"kind": "convergence", "T_list": [32, 64]}, "series,T,value,gap,ratio")):
        out = tmp_path / "r.csv"
        assert cli.main(["report", "--config", _cfg(tmp_path, obj), "--json", str(out)]) == 0
        text = out.read_text()
        assert text.endswith("\n")
        if head:
            assert text.splitlines()[0] == head


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "difflab.cli", "configs"], capture_output=True, text=True)
    assert res.returncode == 0 and "builtin:mask_forward" in res.stdout
