import pytest

import app
import core.runner as runner
from core.db import close_db, get_all_runs, init_db
from core.env_manager import parse_config
from core.runner import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, run
from core.utils import read_csv, read_json


def make_cfg(out, **flags):
    base = {"n": "4", "s": "0.5", "theta": "0.5", "tol": "1e-9", "jobs": "1",
            "out": str(out)}
    base.update({k: str(v) for k, v in flags.items()})
    return parse_config(flags=base, use_app_defaults=False)


def ledger(out):
    init_db(out)
    try:
        return get_all_runs()
    finally:
        close_db()


def test_minimize_writes_manifest_tables_and_ledger(tmp_path, capsys):
    cfg = make_cfg(tmp_path)
    assert run(cfg) == EXIT_OK
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert manifest["status"] == "completed"
    assert manifest["config"]["theta"] == 0.5
    assert manifest["seeds"] == {"base": 0}
    phases = [e["phase"] for e in manifest["events"]]
    assert phases[0] == "begin_setup" and phases[-1] == "all_done"

    header, rows = read_csv(tmp_path / f"{cfg.stem}.csv")
    assert header[0] == "n" and rows[0][-1] == "true"
    header, rows = read_csv(tmp_path / f"{cfg.stem}_field.csv")
    assert header == ["x", "value"]
    assert len(rows) == 4

    runs = ledger(tmp_path)
    assert [r["status"] for r in runs] == ["completed"]
    assert runs[0]["solves"] == 1
    assert "[all_done]" in capsys.readouterr().out


def test_existing_manifest_needs_overwrite(tmp_path):
    assert run(make_cfg(tmp_path)) == EXIT_OK
    assert run(make_cfg(tmp_path)) == EXIT_CONFIG
    assert run(make_cfg(tmp_path, overwrite="true")) == EXIT_OK
    assert len(ledger(tmp_path)) == 2


def test_unwritable_output_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    assert run(make_cfg(blocker / "sub")) == EXIT_CONFIG


def test_solver_failures_exit_with_solver_code(tmp_path):
    cfg = make_cfg(tmp_path, max_iter=1)
    assert run(cfg) == EXIT_SOLVER
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert manifest["status"] == "failed"
    assert manifest["failures"] == 1
    assert ledger(tmp_path)[0]["status"] == "failed"


def test_site_outside_the_box_is_a_config_error(tmp_path):
    cfg = make_cfg(tmp_path, experiment="diagnostics", site=5, samples=2)
    assert run(cfg) == EXIT_CONFIG
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert manifest["status"] == "failed"
    assert "Site" in manifest["error"]
    phases = [e["phase"] for e in manifest["events"]]
    assert "begin_compute" not in phases
    assert ledger(tmp_path)[0]["status"] == "failed"


def test_error_raised_during_compute_is_a_solver_failure(tmp_path, monkeypatch):
    def broken(cfg, session):
        raise ValueError("singular preconditioner")

    monkeypatch.setitem(runner.COMMANDS, "minimize", broken)
    cfg = make_cfg(tmp_path)
    assert run(cfg) == EXIT_SOLVER
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert manifest["status"] == "failed"
    assert manifest["error"] == "ValueError: singular preconditioner"
    phases = [e["phase"] for e in manifest["events"]]
    assert "begin_compute" in phases


def test_fn_counts_bias_check_failures(tmp_path):
    cfg = make_cfg(tmp_path, experiment="fn", n=2, pad=1, resamples=2, bias_check="true",
                   max_iter=1)
    assert run(cfg) == EXIT_SOLVER
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert manifest["solves"] == 4
    assert manifest["failures"] == 4
    assert manifest["results"]["estimate"]["bias_failures"] == 2


def test_cli_rejects_bad_order(capsys):
    assert app.main(["minimize", "--s=1.2"]) == EXIT_CONFIG
    assert "Invalid configuration (s)" in capsys.readouterr().out


def test_cli_missing_config_file(tmp_path):
    assert app.main(["minimize", f"--config={tmp_path / 'none.env'}"]) == EXIT_CONFIG


def test_extremal_command(tmp_path):
    cfg = make_cfg(tmp_path, experiment="extremal", n="4,8", realizations=2, s=0.6)
    assert run(cfg) == EXIT_OK
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert set(manifest["results"]["states"]) == {"4", "8"}
    assert manifest["results"]["glue"]["8"]["chain_holds"]
    assert len(manifest["seeds"]["realizations"]) == 2
    header, _ = read_csv(tmp_path / f"{cfg.stem}_field.csv")
    assert header == ["x", "v_plus", "v_minus"]
    assert (tmp_path / f"{cfg.stem}_nested.csv").exists()


@pytest.mark.parametrize("theta", [0.0, 0.5])
def test_diagnostics_command(tmp_path, theta):
    cfg = make_cfg(tmp_path, experiment="diagnostics", samples=3, theta=theta)
    assert run(cfg) == EXIT_OK
    manifest = read_json(tmp_path / f"{cfg.stem}.json")
    assert all(c["passed"] for c in manifest["results"]["checks"])
    assert manifest["results"]["cutoff"]["sides"] == [2, 4]
    assert ("envelope" in manifest["results"]) == (theta > 0)
