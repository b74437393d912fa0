import json


from clustersmc.cli import main
from clustersmc.data import import_csv

FAST = ["--rounds", "2"]


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", *FAST, "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"config.resolved.json", "table.csv", "curves.csv", "messages.log", "audit.json"} <= names
    assert json.loads((out / "audit.json").read_text())["server_disclosures"] == []
    assert len((out / "messages.log").read_text().splitlines()) == 48
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["T"] == 2 and resolved["strategy"] == "smc"
    assert "SMC" in capsys.readouterr().out


def test_run_rejects_indivisible(tmp_path, capsys):
    assert main(["run", "--clients", "5", "--clusters", "2", "--out", str(tmp_path)]) == 2
    assert "divisible" in capsys.readouterr().err


def test_run_rejects_bad_config_field(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dp_sigma": -1}))
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "dp_sigma" in capsys.readouterr().err


def test_run_from_resolved_config_reproduces(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", *FAST, "--strategy", "dp", "--seed", "3", "--out", str(a)])
    main(["run", "--config", str(a / "config.resolved.json"), "--out", str(b)])
    assert (a / "table.csv").read_bytes() == (b / "table.csv").read_bytes()


def test_compare_null_training_identical_rows(tmp_path):
    out = tmp_path / "cmp"
    rc = main(["compare", "--rounds", "1", "--repeats", "1", "--lr", "0", "--dp-sigma", "0", "--out", str(out)])
    assert rc == 0
    avg = [l.split(",") for l in (out / "table.csv").read_text().splitlines() if l.startswith("Avg")]
    assert [r[1] for r in avg] == ["FedAvg", "DP", "SMC"]
    assert len({r[2] for r in avg}) == 1
    overhead = json.loads((out / "overhead.json").read_text())
    assert overhead["smc"]["ratio_vs_fedavg"] == 2.0
    assert {p.name for p in out.glob("curves_*.csv")} == {"curves_fedavg.csv", "curves_dp.csv", "curves_smc.csv"}


def test_compare_null_training_identical_with_default_dp_noise(tmp_path):
    # eta=0 with DP still perturbs; only fedavg and smc must coincide
    out = tmp_path / "cmp"
    main(["compare", "--rounds", "1", "--repeats", "1", "--lr", "0", "--strategies", "fedavg,smc", "--out", str(out)])
    avg = [l.split(",") for l in (out / "table.csv").read_text().splitlines() if l.startswith("Avg")]
    assert avg[0][2:] == avg[1][2:]


def test_compare_rejects_unknown_strategy(tmp_path):
    assert main(["compare", "--strategies", "fedavg,he", "--out", str(tmp_path)]) == 2


def test_audit_subcommand(tmp_path, capsys):
    out = tmp_path / "run"
    main(["run", *FAST, "--strategy", "fedavg", "--export-payloads", "--out", str(out)])
    capsys.readouterr()
    assert main(["audit", str(out / "messages.log")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["total_messages"] == 24
    assert main(["audit", str(out / "messages.log"), "--payloads", str(out / "payloads.npz")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert len(rep["server_disclosures"]) == 12

    bad = tmp_path / "bad.log"
    bad.write_text((out / "messages.log").read_text() + "garbage\n")
    assert main(["audit", str(bad)]) == 2
    assert "line 25" in capsys.readouterr().err


def test_gen_data(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path)]) == 0
    clients = import_csv(tmp_path / "data.csv")
    assert [c.n_train + c.n_test for c in clients] == [267, 211, 207, 199, 223, 110]


def test_protocol_failure_exit_code(tmp_path, monkeypatch, capsys):
    from clustersmc import protocol

    original = protocol.SimNetwork.send

    def lossy(self, round, sender, receiver, kind, payload):
        if kind == "share" and sender == 1:
            return
        original(self, round, sender, receiver, kind, payload)

    monkeypatch.setattr(protocol.SimNetwork, "send", lossy)
    assert main(["run", *FAST, "--out", str(tmp_path)]) == 3
    assert "missing share from hospital 1" in capsys.readouterr().err


def test_compare_parallel_matches_serial(tmp_path):
    args = ["compare", "--rounds", "3", "--repeats", "2"]
    main([*args, "--out", str(tmp_path / "serial")])
    main([*args, "--workers", "2", "--out", str(tmp_path / "parallel")])
    for name in ("table.csv", "curves_smc.csv", "overhead.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
