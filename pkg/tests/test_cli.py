import json

from zenosde.cli import (
    EXIT_CONFIG,
    EXIT_EXPLODED,
    EXIT_FINDING,
    EXIT_OK,
    build_preset,
    main,
)
from zenosde.system import spec_from_dict


def read(p):
    return p.read_bytes()


def manifest_without_timestamp(path):
    data = json.loads(path.read_text())
    data.pop("created_at")
    return data


def test_preset_emits_valid_config(capsys):
    assert main(["preset", "case2"]) == EXIT_OK
    cfg = json.loads(capsys.readouterr().out)
    spec = spec_from_dict(cfg)
    assert spec.drift.values == (-1.0, 0.5)
    assert spec.diffusion.values == (0.3, 2.0)
    assert cfg["meta"]["sources"]["xi_generator"] == "toolkit-default"


def test_preset_unknown_name(capsys):
    assert main(["preset", "nosuch"]) == EXIT_CONFIG
    assert "UnknownPreset" in capsys.readouterr().err


def test_simulate_case2_writes_outputs(tmp_path):
    out = tmp_path / "run"
    code = main(["simulate", "--preset", "case2", "--seed", "7", "--horizon", "2.5",
                 "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "traj_0.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["resolved"]["seed"] == 7
    assert "traj_0.csv" in manifest["outputs"]


def test_simulate_case3_reports_explosion_via_exit_code(tmp_path):
    out = tmp_path / "boom"
    code = main(["simulate", "--preset", "case3", "--seed", "7", "--out", str(out)])
    assert code == EXIT_EXPLODED
    assert (out / "traj_0.csv").exists()       # status still written
    assert (out / "manifest.json").exists()


def test_check_exit_codes(tmp_path, capsys):
    assert main(["check", "--preset", "case2", "--epsilon", "0.1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "0.025" in out               # exponent printed
    assert main(["check", "--preset", "case1", "--epsilon", "0.1"]) == EXIT_FINDING
    out = capsys.readouterr().out
    assert "0.955" in out               # failing margin printed
    assert main(["check", "--preset", "case3", "--epsilon", "0.1"]) == EXIT_FINDING
    out = capsys.readouterr().out
    assert "witness" in out             # jump moment witness printed


def test_check_intro_skips_stability_section(capsys):
    assert main(["check", "--preset", "intro"]) == EXIT_FINDING
    out = capsys.readouterr().out
    assert "skipped" in out


def test_malformed_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"drift": {,}', encoding="utf-8")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "line 1" in err
    good_missing = tmp_path / "missing.json"
    good_missing.write_text('{"horizon": 1.0}', encoding="utf-8")
    assert main(["simulate", "--config", str(good_missing), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "missing" in capsys.readouterr().err


def test_probe_meansq_writes_curves(tmp_path):
    out = tmp_path / "probe"
    code = main(["probe", "--preset", "case2", "--kind", "meansq", "--paths", "40",
                 "--grid", "0.5,1.0", "--seed", "3", "--out", str(out)])
    assert code == EXIT_OK
    rows = (out / "meansq.csv").read_text().splitlines()
    assert rows[0] == "t,mean_sq,stderr,median_sq,explosion_fraction"
    assert len(rows) == 3
    assert (out / "meansq.json").exists() and (out / "manifest.json").exists()


def test_probe_bound_on_case2(tmp_path, capsys):
    out = tmp_path / "bound"
    code = main(["probe", "--preset", "case2", "--kind", "bound", "--segment", "1",
                 "--paths", "200", "--seed", "5", "--out", str(out)])
    assert code == EXIT_OK
    data = json.loads((out / "bound.json").read_text())
    assert data["ok"] is True


def test_preset_config_file_round_trip(tmp_path, capsys):
    # a config written by `preset` must drive `simulate` to identical bytes
    assert main(["preset", "case2"]) == EXIT_OK
    cfg_text = capsys.readouterr().out
    f = tmp_path / "case2.json"
    f.write_text(cfg_text, encoding="utf-8")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["simulate", "--config", str(f), "--seed", "11", "--horizon", "2.0",
                 "--out", str(out_a)]) == EXIT_OK
    assert main(["simulate", "--preset", "case2", "--seed", "11", "--horizon", "2.0",
                 "--out", str(out_b)]) == EXIT_OK
    assert read(out_a / "traj_0.csv") == read(out_b / "traj_0.csv")
    assert manifest_without_timestamp(out_a / "manifest.json") == \
        manifest_without_timestamp(out_b / "manifest.json")


def test_rerun_reproduces_outputs_byte_identically(tmp_path):
    out1 = tmp_path / "first"
    code = main(["probe", "--preset", "case2", "--kind", "prob", "--paths", "50",
                 "--deltas", "1,0.1", "--eps1", "5", "--seed", "9",
                 "--horizon", "1.5", "--out", str(out1)])
    assert code == EXIT_OK
    out2 = tmp_path / "second"
    assert main(["rerun", str(out1 / "manifest.json"), "--out", str(out2)]) == EXIT_OK
    for name in ("prob.json", "prob.csv"):
        assert read(out1 / name) == read(out2 / name)
    assert manifest_without_timestamp(out1 / "manifest.json") == \
        manifest_without_timestamp(out2 / "manifest.json")


def test_threads_do_not_change_outputs(tmp_path):
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        assert main(["probe", "--preset", "case2", "--kind", "meansq", "--paths", "60",
                     "--grid", "0.5,1.5", "--seed", "2", "--threads", threads,
                     "--out", str(out)]) == EXIT_OK
        outs.append(out)
    assert read(outs[0] / "meansq.csv") == read(outs[1] / "meansq.csv")
    assert read(outs[0] / "meansq.json") == read(outs[1] / "meansq.json")


def test_all_presets_build():
    for name in ("intro", "case1", "case2", "case3"):
        spec = spec_from_dict(build_preset(name))
        assert spec.horizon > 0
