import json
from pathlib import Path

import pytest

from autobid import formats
from autobid.cli import ExperimentConfig, audit_seeds, main
from autobid.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_TCPA = """
seed = 1
scenario.preset = reference
scenario.requests = 1500
advertiser.value = 10
advertiser.target = 3.25
mechanism.kind = tcpa
mechanism.margin = 0.75
mechanism.grid_min = 0.5
mechanism.grid_max = 9.0
mechanism.grid_points = 30
audit.mode = closed_form
audit.grid_min = 0.5
audit.grid_max = 9.0
audit.grid_points = 50
"""


def test_parse_config_comments_and_blanks():
    flat = formats.parse_config("# header\n\na = 1  # trailing\nb.c=two words\n")
    assert flat == {"a": "1", "b.c": "two words"}


@pytest.mark.parametrize("text", ["novalue\n", " = 3\n", "a = 1\na = 2\n"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        formats.parse_config(text)


def test_missing_key_is_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "advertiser.value = 10\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "advertiser.target" in capsys.readouterr().err


def test_unknown_key_is_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_TCPA + "control.kpp = 1\n")
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "control.kpp" in capsys.readouterr().err


def test_bad_number_is_named(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_TCPA.replace("mechanism.margin = 0.75", "mechanism.margin = lots"))
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "mechanism.margin" in capsys.readouterr().err


def test_weights_must_sum_to_one():
    flat = formats.load_config(CONFIGS / "troi_decomposed.cfg")
    flat["mechanism.weights.low"] = "0.5"
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_mapping(flat, "calibrate")
    assert err.value.key == "mechanism.weights"


def test_audit_section_required_for_audit():
    flat = formats.parse_config(SMALL_TCPA)
    del flat["audit.grid_min"]
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_mapping(flat, "audit")
    assert err.value.key == "audit.grid_min"
    ExperimentConfig.from_mapping(flat, "simulate")


def test_output_dir_required(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    assert main(["simulate", "--config", cfg]) == 2


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    assert main(["simulate", "--config", cfg, "--out", str(blocker / "sub")]) == 1


def test_param_flags_override(tmp_path):
    flat = formats.parse_config(SMALL_TCPA + "strategy.m = 2\n")
    cfg = ExperimentConfig.from_mapping(flat, "simulate", {"m": 3.0, "n": None})
    assert (cfg.strategy.m, cfg.strategy.n) == (3.0, 1.0)


def test_audit_seeds_are_named_substreams():
    assert audit_seeds(0, 3) == audit_seeds(0, 3)
    assert audit_seeds(0, 3)[:2] == audit_seeds(0, 2)
    assert len(set(audit_seeds(0, 5))) == 5 and audit_seeds(0, 2) != audit_seeds(1, 2)


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def test_simulate_outputs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    assert run(tmp_path / "o", "simulate", "--config", cfg) == 0
    log = (tmp_path / "o" / "log.csv").read_text().splitlines()
    assert log[0] == ",".join(formats.LOG_COLUMNS) and len(log) == 1501
    assert (tmp_path / "o" / "violations.csv").read_text().startswith("request_id,cpa_slack")
    summary = formats.parse_config((tmp_path / "o" / "summary.txt").read_text())
    assert summary["constraint_satisfied"] == "true"


def test_calibrate_exports_reimportable_mechanism(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    assert run(tmp_path / "o", "calibrate", "--config", cfg) == 0
    text = (tmp_path / "o" / "mechanism.json").read_text()
    mech = formats.mechanism_from_text(text)
    assert formats.mechanism_to_text(mech) == text
    assert (tmp_path / "o" / "frontier.csv").read_text().startswith("value_class,report,")
    # the exported file drives a simulation directly
    file_cfg = SMALL_TCPA.replace("mechanism.kind = tcpa", "mechanism.kind = file\n"
                                  f"mechanism.file = {tmp_path / 'o' / 'mechanism.json'}")
    file_cfg = "\n".join(l for l in file_cfg.splitlines()
                         if not l.startswith(("mechanism.margin", "mechanism.grid")))
    assert run(tmp_path / "f", "simulate", "--config", write_cfg(tmp_path, file_cfg, "f.cfg")) == 0
    assert run(tmp_path / "s", "simulate", "--config", cfg) == 0
    assert (tmp_path / "f" / "log.csv").read_bytes() == (tmp_path / "s" / "log.csv").read_bytes()


def test_audit_constructed_mechanism_expect_ic(tmp_path):
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    assert run(tmp_path / "o", "audit", "--config", cfg, "--expect-ic") == 0
    rows = (tmp_path / "o" / "audit_rows.csv").read_text().splitlines()
    assert rows[0] == ",".join(formats.AUDIT_COLUMNS)
    summary = formats.parse_config((tmp_path / "o" / "summary.txt").read_text())
    assert summary["ic"] == "true" and summary["argmax"] == "3.25"


def test_audit_per_request_auction_fails_expect_ic(tmp_path):
    cfg = str(CONFIGS / "example1_spa.cfg")
    assert run(tmp_path / "o", "audit", "--config", cfg, "--expect-ic") == 3
    assert run(tmp_path / "p", "audit", "--config", cfg) == 0
    summary = formats.parse_config((tmp_path / "o" / "summary.txt").read_text())
    assert summary["ic"] == "false" and float(summary["gap"]) == pytest.approx(5.0)


def test_repro_example1_table(tmp_path):
    assert run(tmp_path / "o", "repro-example1") == 0
    rows = (tmp_path / "o" / "example1.csv").read_text().splitlines()
    assert rows == ["case,report,won_requests,delivered_cpa,profit,constraint_satisfied",
                    "truthful,4.0,2,1.0,9.0,true",
                    "overbid,5.000000005,1 2,3.0,14.0,true"]
    gains = (tmp_path / "o" / "example1_gains.csv").read_text().splitlines()[1:]
    for line in gains:
        v, gain, expected = map(float, line.split(","))
        assert gain == expected == v - 5


def test_repro_example1_reads_value_from_config(tmp_path):
    cfg = write_cfg(tmp_path, "advertiser.value = 6\nadvertiser.target = 4\n")
    assert run(tmp_path / "o", "repro-example1", "--config", cfg) == 0
    summary = formats.parse_config((tmp_path / "o" / "summary.txt").read_text())
    assert (summary["truthful_profit"], summary["overbid_profit"]) == ("5.0", "6.0")


def test_simulated_audit_small(tmp_path):
    text = SMALL_TCPA.replace("audit.mode = closed_form", "audit.mode = simulated\naudit.seeds = 2")
    text = text.replace("audit.grid_points = 50", "audit.grid_points = 20")
    cfg = write_cfg(tmp_path, text)
    assert run(tmp_path / "o", "audit", "--config", cfg) == 0
    rows = (tmp_path / "o" / "audit_rows.csv").read_text().splitlines()[1:]
    seeds = [r.split(",")[1] for r in rows]
    assert len(rows) == 2 * 21 and seeds[:2] == sorted(seeds[:2], key=int)


@pytest.mark.parametrize("name", ["troi_composite", "troi_decomposed"])
def test_troi_configs_round_trip(tmp_path, name):
    cfg = str(CONFIGS / f"{name}.cfg")
    assert run(tmp_path / "c", "calibrate", "--config", cfg) == 0
    text = (tmp_path / "c" / "mechanism.json").read_text()
    data = json.loads(text)
    assert data["kind"] == name.split("_")[1]
    assert formats.mechanism_to_text(formats.mechanism_from_text(text)) == text
    assert run(tmp_path / "a", "audit", "--config", cfg, "--expect-ic") == 0


@pytest.mark.parametrize("command", ["simulate", "calibrate", "audit", "repro-example1"])
def test_byte_identical_reruns(tmp_path, command):
    cfg = write_cfg(tmp_path, SMALL_TCPA)
    for out in ("one", "two"):
        args = [command, "--out", str(tmp_path / out)]
        if command != "repro-example1":
            args += ["--config", cfg]
        assert main(args) == 0
    a = sorted((tmp_path / "one").iterdir())
    b = sorted((tmp_path / "two").iterdir())
    assert [p.name for p in a] == [p.name for p in b]
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
