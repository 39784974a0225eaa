import os
from pathlib import Path

import pytest

import cascade_bsde as cb

CONFIGS = Path(os.environ.get("CASCADE_BSDE_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs"))


def test_names():
    assert "utility" in cb.experiment_names()
    assert set(cb.check_suites()) == {"jump_model", "bsde", "cascade", "applications"}


def test_philox_known_answer():
    assert cb.philox(0, [0, 0, 0, 0]) == [0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8]


def test_compensator_from_dict():
    report = cb.evaluate({"experiment": "compensator_check", "paths": 20000, "M": 20, "lambda0": 0.5})
    assert report["pass"]
    assert abs(report["headline"]["exact"] - 0.393469) < 1e-6


def test_seed_is_reproducible():
    cfg = {"experiment": "compensator_check", "paths": 5000, "M": 10}
    a = cb.evaluate(cfg, seed=3)
    b = cb.evaluate(cfg, seed=3)
    assert a["headline"] == b["headline"]
    assert a["seed"] == 3


def test_shipped_config_writes_outputs(tmp_path):
    report = cb.run(CONFIGS / "utility_oracle.json", output_dir=str(tmp_path))
    assert report["pass"]
    assert (tmp_path / "results.csv").exists()
    assert (tmp_path / "summary.json").exists()


def test_validation_error_is_value_error(tmp_path):
    with pytest.raises(cb.ValidationError, match="M"):
        cb.run(CONFIGS / "invalid_zero_steps.json", output_dir=str(tmp_path / "out"))
    assert not (tmp_path / "out").exists()


def test_bsde_suite():
    results = cb.check("bsde")
    assert results and all(r["pass"] for r in results)
