import json
import subprocess
import sys

from bridgelab import cli
from bridgelab.accept import strip_timing


def run_cli(args, env=None):
    return cli.main(args)


def load(path):
    with open(path) as fh:
        return json.load(fh)


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 2


def test_unknown_model_is_usage_error(tmp_path, capsys):
    rc = cli.main(["kernel-check", "--model", "klein-bottle", "--report", str(tmp_path / "r.json")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "euclidean:m" in err and "s2" in err


def test_zero_dt_is_usage_error(tmp_path):
    rc = cli.main(
        ["bridge-sample", "--model", "euclidean:1", "--dt", "0", "--paths", "4",
         "--out", str(tmp_path / "p.csv")]
    )
    assert rc == 2


def test_kernel_check_report_validates(tmp_path):
    rep = tmp_path / "kc.json"
    rc = cli.main(["kernel-check", "--model", "s1", "--n-t", "6", "--report", str(rep)])
    assert rc == 0
    report = load(rep)
    cli.validate_report(report)
    assert report["experiment"] == "kernel-check"
    assert report["pass"] is True
    assert report["results"]["dual_series_worst"] <= 1e-10


def test_bounds_check_certificate_fields(tmp_path):
    rep = tmp_path / "cert.json"
    rc = cli.main(
        ["bounds-check", "--model", "s2", "--inequality", "gradient",
         "--t-min", "0.05", "--t-max", "0.7", "--grid", "10x10", "--report", str(rep)]
    )
    assert rc == 0
    report = load(rep)
    cert = report["results"]["certificates"]["gradient"]
    assert set(cert) == {"inequality_id", "grid", "fitted_constants", "worst_margin", "violations"}
    assert cert["violations"] == []


def test_bridge_sample_csv_schema(tmp_path):
    out = tmp_path / "paths.csv"
    rep = tmp_path / "paths.report.json"
    rc = cli.main(
        ["bridge-sample", "--model", "s2", "--dt", "0.125", "--paths", "3",
         "--sampler", "sde", "--seed", "7", "--out", str(out), "--report", str(rep)]
    )
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "path_id,t,coord_0,coord_1,coord_2"
    assert len(lines) == 1 + 3 * 9  # header + paths x times
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[1]) == 0.0


def test_lift_run_roundtrip(tmp_path):
    paths_csv = tmp_path / "paths.csv"
    lifts_csv = tmp_path / "lifts.csv"
    rep1 = tmp_path / "s.json"
    rep2 = tmp_path / "l.json"
    assert cli.main(
        ["bridge-sample", "--model", "s2", "--dt", "0.05", "--paths", "2",
         "--sampler", "exact", "--out", str(paths_csv), "--report", str(rep1)]
    ) == 0
    rc = cli.main(
        ["lift-run", "--model", "s2", "--paths", str(paths_csv),
         "--out", str(lifts_csv), "--report", str(rep2)]
    )
    assert rc == 0
    lines = lifts_csv.read_text().strip().splitlines()
    assert lines[0] == "path_id,t,frame_0_0,frame_0_1,frame_1_0,frame_1_1"
    report = load(rep2)
    assert report["results"]["worst_orthonormality_defect"] <= 1e-3


def test_markov_test_cli(tmp_path):
    rep = tmp_path / "mk.json"
    rc = cli.main(
        ["markov-test", "--model", "euclidean:1", "--paths", "400",
         "--inner", "16", "--report", str(rep)]
    )
    assert rc == 0
    r = load(rep)
    assert r["results"]["defect"] <= 4.0 * r["results"]["se"]


def test_semimart_test_cli_with_custom_bump(tmp_path):
    rep = tmp_path / "sm.json"
    rc = cli.main(
        ["semimart-test", "--model", "euclidean:1", "--x", "0", "--y", "1",
         "--paths", "500", "--dt", "0.02", "--f", "bump:center=0.5,radius=0.3",
         "--report", str(rep)]
    )
    assert rc == 0
    r = load(rep)
    (fid,) = r["results"]["martingale_reports"].keys()
    assert fid.startswith("bump:center=0.5")


def test_seed_precedence_env_and_flag(tmp_path, monkeypatch):
    rep1 = tmp_path / "a.json"
    rep2 = tmp_path / "b.json"
    rep3 = tmp_path / "c.json"
    monkeypatch.setenv("BRIDGELAB_SEED", "7")
    cli.main(["kernel-check", "--model", "s1", "--n-t", "4", "--report", str(rep1)])
    assert load(rep1)["seed"] == 7
    cli.main(["kernel-check", "--model", "s1", "--n-t", "4", "--seed", "9", "--report", str(rep2)])
    assert load(rep2)["seed"] == 9
    monkeypatch.delenv("BRIDGELAB_SEED")
    cli.main(["kernel-check", "--model", "s1", "--n-t", "4", "--report", str(rep3)])
    assert load(rep3)["seed"] == 42


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "experiment": "bridge-sample",
        "model": "euclidean:1",
        "dt": 0.25,
        "paths": 2,
        "sampler": "exact",
        "out": str(tmp_path / "cfg_paths.csv"),
    }))
    rep = tmp_path / "run.json"
    rc = cli.main(["run", "--config", str(cfg), "--report", str(rep)])
    assert rc == 0
    r = load(rep)
    assert r["config"]["paths"] == 2
    # flags win over the config file
    rep2 = tmp_path / "run2.json"
    out2 = tmp_path / "cfg_paths2.csv"
    rc = cli.main(["run", "--config", str(cfg), "--out", str(out2), "--report", str(rep2)])
    assert rc == 0
    assert load(rep2)["config"]["out"] == str(out2)


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert cli.main(["run", "--config", str(cfg)]) == 2
    cfg2 = tmp_path / "bad2.json"
    cfg2.write_text(json.dumps({"experiment": "fly-to-the-moon"}))
    assert cli.main(["run", "--config", str(cfg2)]) == 2


def test_accept_all_reduced_euclidean_exits_zero(tmp_path):
    rep = tmp_path / "acc.json"
    rc = cli.main(
        ["accept-all", "--reduced", "--criteria", "3,6,10,11", "--report", str(rep)]
    )
    assert rc == 0
    r = load(rep)
    assert r["pass"] is True
    ids = [c["cid"] for c in r["results"]["suite"]["criteria"]]
    assert ids == ["3", "6", "10", "11"]


def test_accept_all_reports_bit_identical_modulo_timing(tmp_path):
    rep = tmp_path / "r.json"
    args = ["accept-all", "--reduced", "--criteria", "6,11", "--seed", "42",
            "--report", str(rep)]
    assert cli.main(args) == 0
    a = strip_timing(load(rep))
    assert cli.main(args) == 0
    b = strip_timing(load(rep))
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_console_script_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "bridgelab.cli", "--version"], capture_output=True, text=True
    )
    assert out.returncode == 0
