import json
import math

import pytest

from dpfedsim.cli import main
from dpfedsim.config import assign_budgets, parse_config
from dpfedsim.errors import ConfigError
from dpfedsim.reporting import fmt9, read_history_csv
from dpfedsim.schedule import ScheduleParams, round_scale

MINIMAL = """
[dataset]
task = "gauss-blobs"
n = 60
feature_dim = 2
seed = 1

[model]
kind = "logistic-binary"
input_dim = 2

[federation]
num_clients = 4
sample_size = 2
rounds = 3
local_steps = 1
batch_size = 8
learning_rate = 0.3

[privacy]
budgets = [1.0, 1.0, 2.0, 2.0]

[policy]
kind = "fixed"
clip = 0.5
"""

GRID_EXTRA = """
[grid]
eps_values = [0.5, 1.0, 2.0]
clip_values = [0.2, 1.0]
rounds = 4
num_clients = 4
sample_size = 2
batch_size = 8
learning_rate = 0.5
seeds_per_cell = 1
proxy_task = "gauss-blobs"
proxy_n = 120
proxy_dim = 2
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config(_write(tmp_path, MINIMAL))
    assert cfg.out_dir == "out"
    assert cfg.master_seed == 0
    assert cfg.delta == 1e-5
    assert cfg.alphas == tuple(range(2, 65))
    assert cfg.plateau_frac == 0.6
    assert cfg.floor == 0.1
    assert cfg.renormalize_weights is True
    assert cfg.grid is None
    assert cfg.budgets == (1.0, 1.0, 2.0, 2.0)
    assert cfg.policy.kind == "fixed" and cfg.policy.clip == 0.5
    assert cfg.model.kind == "logistic-binary"


def test_config_reports_every_violation_at_once(tmp_path):
    text = MINIMAL.replace("rounds = 3", "rounds = 0")
    text = text.replace('clip = 0.5', 'clip = -1.0')
    text = text.replace("[privacy]", "[privacy]\ndelta = 2.0")
    text += "\n[schedule]\nfloor = 0.0\n"
    with pytest.raises(ConfigError) as exc_info:
        parse_config(_write(tmp_path, text))
    violations = exc_info.value.violations
    assert len(violations) >= 4
    joined = "\n".join(violations)
    assert "federation.rounds" in joined
    assert "policy.clip" in joined
    assert "privacy.delta" in joined
    assert "schedule.floor" in joined


def test_config_rejects_duplicate_keys(tmp_path):
    text = MINIMAL + "\n[run]\nmaster_seed = 1\nmaster_seed = 2\n"
    with pytest.raises(ConfigError, match="TOML"):
        parse_config(_write(tmp_path, text))


def test_config_rejects_unknown_keys_and_sections(tmp_path):
    text = MINIMAL.replace("[federation]", "[federation]\nbogus = 1")
    with pytest.raises(ConfigError, match=r"federation\.bogus: unknown key"):
        parse_config(_write(tmp_path, text))
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(_write(tmp_path, MINIMAL + "\n[mystery]\nx = 1\n"))


def test_config_missing_section(tmp_path):
    text = MINIMAL.replace("[policy]", "[policyx]").replace('kind = "fixed"', 'y = "fixed"')
    with pytest.raises(ConfigError) as exc_info:
        parse_config(_write(tmp_path, text))
    assert any("policy: required section is missing" in v
               for v in exc_info.value.violations)


def test_config_rejects_boolean_for_int(tmp_path):
    text = MINIMAL.replace("rounds = 3", "rounds = true")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config(_write(tmp_path, text))


def test_config_sample_size_exceeds_clients(tmp_path):
    text = MINIMAL.replace("sample_size = 2", "sample_size = 9")
    with pytest.raises(ConfigError, match=r"federation\.sample_size"):
        parse_config(_write(tmp_path, text))


def test_config_budget_count_must_match_clients(tmp_path):
    text = MINIMAL.replace("budgets = [1.0, 1.0, 2.0, 2.0]", "budgets = [1.0, 2.0]")
    with pytest.raises(ConfigError, match=r"privacy\.budgets"):
        parse_config(_write(tmp_path, text))


def test_config_budgets_xor_levels(tmp_path):
    text = MINIMAL.replace(
        "budgets = [1.0, 1.0, 2.0, 2.0]",
        "budgets = [1.0, 1.0, 2.0, 2.0]\nbudget_levels = [1.0]\nbudget_proportions = [1.0]")
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(_write(tmp_path, text))
    text = MINIMAL.replace("budgets = [1.0, 1.0, 2.0, 2.0]", "")
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config(_write(tmp_path, text))


def test_config_budget_levels_expand(tmp_path):
    text = MINIMAL.replace(
        "budgets = [1.0, 1.0, 2.0, 2.0]",
        "budget_levels = [0.5, 2.0]\nbudget_proportions = [0.75, 0.25]")
    cfg = parse_config(_write(tmp_path, text))
    assert cfg.budgets == (0.5, 0.5, 0.5, 2.0)
    bad = MINIMAL.replace(
        "budgets = [1.0, 1.0, 2.0, 2.0]",
        "budget_levels = [0.5, 2.0]\nbudget_proportions = [0.75, 0.75]")
    with pytest.raises(ConfigError, match="sum to 1"):
        parse_config(_write(tmp_path, bad))


def test_assign_budgets_largest_remainder():
    assert assign_budgets((0.5, 1.5, 5.0), (0.6, 0.3, 0.1), 20) == \
        (0.5,) * 12 + (1.5,) * 6 + (5.0,) * 2
    # remainder seat goes to the larger fractional part; ties to the first level
    assert assign_budgets((1.0, 2.0), (0.5, 0.5), 5) == (1.0,) * 3 + (2.0,) * 2
    assert assign_budgets((1.0, 2.0, 3.0), (0.45, 0.35, 0.2), 10) == \
        (1.0,) * 5 + (2.0,) * 3 + (3.0,) * 2


def test_config_model_dim_must_match_dataset(tmp_path):
    text = MINIMAL.replace("input_dim = 2", "input_dim = 5")
    with pytest.raises(ConfigError, match=r"model\.input_dim"):
        parse_config(_write(tmp_path, text))


def test_config_mlp_requires_hidden_dim(tmp_path):
    text = MINIMAL.replace('kind = "logistic-binary"', 'kind = "mlp-1hidden"')
    with pytest.raises(ConfigError, match=r"model\.hidden_dim"):
        parse_config(_write(tmp_path, text))
    ok = text.replace("input_dim = 2", "input_dim = 2\nhidden_dim = 4")
    cfg = parse_config(_write(tmp_path, ok))
    assert cfg.model.hidden_dim == 4


def test_config_quadratic_model(tmp_path):
    text = MINIMAL.replace(
        'kind = "logistic-binary"\ninput_dim = 2',
        'kind = "quadratic"\nquad_dim = 3\nquad_seed = 5')
    text = text.replace('task = "gauss-blobs"', 'task = "quadratic"')
    cfg = parse_config(_write(tmp_path, text))
    assert cfg.model.kind == "quadratic"
    assert cfg.model.quad_matrix.shape == (3, 3)
    # regenerating from the same seed gives the same oracle
    cfg2 = parse_config(_write(tmp_path, text, name="again.toml"))
    assert (cfg.model.quad_matrix == cfg2.model.quad_matrix).all()


def test_config_policy_requirements(tmp_path):
    text = MINIMAL.replace('kind = "fixed"\nclip = 0.5', 'kind = "fixed"')
    with pytest.raises(ConfigError, match=r"policy\.clip"):
        parse_config(_write(tmp_path, text))
    text = MINIMAL.replace('kind = "fixed"\nclip = 0.5',
                           'kind = "quantile"\ntarget_quantile = 0.5')
    with pytest.raises(ConfigError) as exc_info:
        parse_config(_write(tmp_path, text))
    joined = "\n".join(exc_info.value.violations)
    assert "policy.clip_init" in joined and "policy.quantile_lr" in joined


def test_config_csv_dataset(tmp_path):
    data = tmp_path / "data.csv"
    data.write_text("f0,f1,label\n0.5,1.0,0\n1.5,-1.0,1\n-0.5,2.0,0\n0.1,0.2,1\n")
    text = MINIMAL.replace(
        'task = "gauss-blobs"\nn = 60\nfeature_dim = 2\nseed = 1',
        f'task = "csv"\npath = "{data}"')
    cfg = parse_config(_write(tmp_path, text))
    assert cfg.dataset.task == "csv"
    assert cfg.dataset.path == str(data)


def test_config_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/run.toml")


def test_cli_exit_code_2_on_config_error(tmp_path, capsys):
    bad = _write(tmp_path, MINIMAL.replace("rounds = 3", "rounds = 0"))
    code = main(["train", "--config", bad])
    assert code == 2
    err = capsys.readouterr().err
    assert "config error: federation.rounds" in err


def test_cli_exit_code_3_on_missing_ledger(tmp_path, capsys):
    code = main(["account", "--ledger", str(tmp_path / "missing.csv")])
    assert code == 3
    assert "not found" in capsys.readouterr().err


def test_cli_account_empty_ledger(tmp_path, capsys):
    ledger = tmp_path / "ledger.csv"
    ledger.write_text("client_id,round,z,steps\n")
    code = main(["account", "--ledger", str(ledger)])
    captured = capsys.readouterr()
    assert code == 0
    assert "warning" in captured.err
    assert captured.out.strip() == "client_id,epsilon,alpha_star"


def test_cli_train_outputs_and_account_agree(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "run1"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    for name in ("history.csv", "ledger.csv", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["policy"]["kind"] == "fixed"
    history = read_history_csv(str(out / "history.csv"))
    assert len(history) == 3
    assert all(row["messages"] == 2 for row in history)

    assert main(["account", "--ledger", str(out / "ledger.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "client_id,epsilon,alpha_star"
    by_id = {}
    for line in lines[1:]:
        cid, eps, alpha = line.split(",")
        if cid in ("min", "median", "max"):
            continue
        by_id[int(cid)] = (eps, alpha)
    for entry in summary["privacy"]["per_client"]:
        eps_str, alpha_str = by_id[entry["client_id"]]
        assert fmt9(entry["epsilon"]) == eps_str
        assert str(entry["alpha_star"]) == alpha_str
    footer = {line.split(",")[0]: line.split(",")[1] for line in lines[-3:]}
    assert footer["min"] == fmt9(summary["privacy"]["eps_min"])
    assert footer["median"] == fmt9(summary["privacy"]["eps_median"])
    assert footer["max"] == fmt9(summary["privacy"]["eps_max"])


def test_cli_policy_and_clip_overrides(tmp_path, capsys):
    text = MINIMAL.replace('kind = "fixed"\nclip = 0.5',
                           'kind = "quantile"\ntarget_quantile = 0.5\n'
                           'clip_init = 0.8\nquantile_lr = 0.2')
    cfg = _write(tmp_path, text)
    out = tmp_path / "forced"
    code = main(["train", "--config", cfg, "--out", str(out),
                 "--policy", "fixed", "--clip", "0.7"])
    capsys.readouterr()
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["policy"]["kind"] == "fixed"
    history = read_history_csv(str(out / "history.csv"))
    assert all(row["mean_clip"] == 0.7 for row in history)
    # forcing fixed without any clip anywhere is a config error
    text2 = text  # quantile config has no clip key
    code = main(["train", "--config", _write(tmp_path, text2, "b.toml"),
                 "--out", str(tmp_path / "x"), "--policy", "fixed"])
    assert code == 2
    assert main(["train", "--config", cfg, "--out", str(out),
                 "--policy", "fixed", "--clip", "-1"]) == 2
    capsys.readouterr()


def test_cli_seed_override_changes_run(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["train", "--config", cfg, "--out", str(out_a), "--seed", "5"]) == 0
    assert main(["train", "--config", cfg, "--out", str(out_b), "--seed", "6"]) == 0
    capsys.readouterr()
    assert (out_a / "history.csv").read_text() != (out_b / "history.csv").read_text()


def test_cli_report_idempotent(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "bundle"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert main(["report", "--out", str(out)]) == 0
    first = (out / "report.json").read_bytes()
    assert main(["report", "--out", str(out)]) == 0
    capsys.readouterr()
    assert (out / "report.json").read_bytes() == first
    payload = json.loads(first)
    assert payload["curve"] is None
    assert len(payload["loss_vs_round"]) == 3
    assert payload["summary"]["rounds"] == 3


def test_cli_report_missing_history(tmp_path, capsys):
    code = main(["report", "--out", str(tmp_path / "nowhere")])
    assert code == 3
    assert "history" in capsys.readouterr().err


def test_cli_schedule_dump_matches_library(capsys):
    assert main(["schedule-dump", "--rounds", "10"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0] == "round,scale"
    params = ScheduleParams(total_rounds=10)
    assert len(out) == 11
    for t in range(10):
        assert out[t + 1] == f"{t},{round_scale(t, params)!r}"


def test_cli_schedule_dump_to_file(tmp_path, capsys):
    assert main(["schedule-dump", "--rounds", "4", "--floor", "0.2",
                 "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    lines = (tmp_path / "schedule.csv").read_text().strip().splitlines()
    params = ScheduleParams(total_rounds=4, floor=0.2)
    assert lines[1:] == [f"{t},{round_scale(t, params)!r}" for t in range(4)]


def test_cli_schedule_dump_needs_rounds(capsys):
    assert main(["schedule-dump"]) == 2
    assert "rounds" in capsys.readouterr().err


def test_cli_fit_then_train_pacdp(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL + GRID_EXTRA)
    fit_out = tmp_path / "fitout"
    assert main(["fit", "--config", cfg, "--out", str(fit_out)]) == 0
    capsys.readouterr()
    assert (fit_out / "fit.json").exists()
    assert (fit_out / "matrix.csv").exists()
    train_out = tmp_path / "trainout"
    code = main(["train", "--config", cfg, "--out", str(train_out),
                 "--policy", "pacdp", "--fit", str(fit_out / "fit.json")])
    capsys.readouterr()
    assert code == 0
    assert (train_out / "fit_used.json").exists()
    summary = json.loads((train_out / "summary.json").read_text())
    assert summary["policy"]["kind"] == "pacdp"
    # the report picks up the stored curve
    assert main(["report", "--out", str(train_out)]) == 0
    capsys.readouterr()
    payload = json.loads((train_out / "report.json").read_text())
    assert payload["curve"] is not None
    assert len(payload["curve"]["samples"]) == 100


def test_cli_pacdp_without_fit_is_config_error(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    code = main(["train", "--config", cfg, "--out", str(tmp_path / "o"),
                 "--policy", "pacdp"])
    assert code == 2
    assert "fit" in capsys.readouterr().err


def test_cli_train_csv_dataset_dim_mismatch(tmp_path, capsys):
    data = tmp_path / "data.csv"
    rows = ["f0,f1,f2,label"] + [f"{i}.0,1.0,2.0,{i % 2}" for i in range(8)]
    data.write_text("\n".join(rows) + "\n")
    text = MINIMAL.replace(
        'task = "gauss-blobs"\nn = 60\nfeature_dim = 2\nseed = 1',
        f'task = "csv"\npath = "{data}"')
    code = main(["train", "--config", _write(tmp_path, text),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "input_dim" in capsys.readouterr().err


def test_history_round_trip(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "rt"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 0
    capsys.readouterr()
    rows = read_history_csv(str(out / "history.csv"))
    for t, row in enumerate(rows):
        assert row["round"] == t
        assert math.isfinite(row["loss"])
        assert 0.0 <= row["accuracy"] <= 1.0
        assert row["mean_clip"] == 0.5
        assert row["floats"] == row["messages"] * 3
