from __future__ import annotations

import csv
import json

import jsonschema
import pytest

from hftmix import config as cfgmod
from hftmix.cli import EXIT_CONFIG, EXIT_DEPENDENCY, main
from hftmix.decomposition import SUBSET_NAMES
from hftmix.errors import ConfigInvalid

PIPELINE = ("ingest", "label", "train-sub", "train-hyper", "backtest", "report")
FAST = ["decomposition.l_chunk=360", "sub_agent.epochs=1", "sub_agent.batch_size=32", "sub_agent.train_every=16",
        "hyper.epochs=1", "hyper.batch_size=32", "hyper.train_every=16"]


def _args(cmd, run_dir, data, extra=()):
    args = [cmd, "--run-dir", str(run_dir), "--set", f"data.path={data}"]
    for o in list(FAST) + list(extra):
        args += ["--set", o]
    return args


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    data = root / "data.csv"
    assert main(["synth-data", "--days", "30", "--seed", "7", "--out", str(data)]) == 0
    for cmd in PIPELINE:
        assert main(_args(cmd, root / "run", data)) == 0, cmd
    return root / "run"


def test_synth_data_is_byte_identical(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    for out, seed in ((a, 7), (b, 7), (c, 8)):
        assert main(["synth-data", "--days", "30", "--seed", str(seed), "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_train_hyper_without_sub_agents(tmp_path, capsys):
    code = main(["train-hyper", "--run-dir", str(tmp_path / "run")])
    assert code == EXIT_DEPENDENCY
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "MissingDependency"
    assert len(err["missing"]) == 6
    assert [p.rsplit("/", 1)[-1] for p in err["missing"]] == [f"{n}.ckpt" for n in SUBSET_NAMES]


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"env": {"fee_rate": 0.0002, "leverage": 3}}))
    assert main(["ingest", "--config", str(cfg), "--run-dir", str(tmp_path / "r")]) == EXIT_CONFIG
    assert json.loads(capsys.readouterr().err.strip())["error"] == "ConfigInvalid"
    assert main(["ingest", "--run-dir", str(tmp_path / "r"), "--set", "memory.kernel=gauss"]) == EXIT_CONFIG


def test_overrides_and_hash():
    base = cfgmod.default_config()
    cfg = cfgmod.apply_overrides(base, ["env.fee_rate=0.001", "decomposition.l_chunk=4320"])
    assert cfg["env"]["fee_rate"] == 0.001 and cfg["decomposition"]["l_chunk"] == 4320
    cfgmod.validate(cfg)
    assert cfgmod.config_hash(cfg) != cfgmod.config_hash(base)
    assert cfgmod.config_hash(base) == cfgmod.config_hash(cfgmod.default_config())
    with pytest.raises(ConfigInvalid):
        cfgmod.apply_overrides(base, ["seed.x=1"])
    with pytest.raises(ConfigInvalid):
        cfgmod.apply_overrides(base, ["no_equals_sign"])


def test_defaults_follow_published_values():
    c = cfgmod.default_config()
    assert c["env"]["fee_rate"] == 0.0002 and c["decomposition"]["l_chunk"] == 360
    assert (c["sub_agent"]["embed_dim"], c["sub_agent"]["hidden_dim"]) == (64, 128)
    assert (c["hyper"]["embed_dim"], c["hyper"]["hidden_dim"]) == (32, 128)
    assert c["sub_agent"]["epochs"] == c["hyper"]["epochs"] == 15
    assert c["sub_agent"]["lr"] == c["hyper"]["lr"] == 1e-4
    assert c["hyper"]["alpha_h"] == 0.5


def test_selfcheck_passes(capsys):
    assert main(["selfcheck"]) == 0


@pytest.mark.slow
def test_report_validates_against_schema(pipeline):
    report = json.loads((pipeline / "report" / "report.json").read_text())
    jsonschema.validate(report, cfgmod.load_schema("report.schema.json"))
    assert {"hyper", "buy_and_hold", "macd", "iv"} <= set(report["strategies"])
    assert all(f"sub_{n}" in report["strategies"] for n in SUBSET_NAMES)


@pytest.mark.slow
def test_artifacts_recorded_with_config_hash(pipeline):
    manifest = json.loads((pipeline / "manifest.json").read_text())
    report = json.loads((pipeline / "report" / "report.json").read_text())
    assert report["config_hash"] == manifest["config_hash"]
    for name in ("hyper.ckpt", "report/net_value.png", "report/weights.png", "report/training_curves.png",
                 "report/metrics.csv", "backtest/weights.csv") + tuple(f"subagents/{n}.ckpt" for n in SUBSET_NAMES):
        assert name in manifest["artifacts"], name
        assert (pipeline / name).exists()
    assert set(manifest["timing"]) >= {"ingest", "label", "train-hyper", "backtest", "report"}


@pytest.mark.slow
def test_weight_log_columns(pipeline):
    with open(pipeline / "backtest" / "weights.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["ts", "w1", "w2", "w3", "w4", "w5", "w6", "action"]
    for r in rows[1:50]:
        assert abs(sum(float(x) for x in r[1:7]) - 1.0) < 1e-9
