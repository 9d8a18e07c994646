import pytest

from brmeta import ConfigurationError
from brmeta.config import load_config, parse_config
from brmeta.simulation import BootstrapDesign, BrockwellDesign


def test_brockwell_defaults_and_overrides():
    cfg = parse_config({"study": "brockwell-estimation", "seed": 3, "brockwell": {"K_list": [5, 20]}})
    assert isinstance(cfg.design, BrockwellDesign)
    assert cfg.design.K_list == (5, 20) and cfg.design.seed == 3 and cfg.design.reps == 10000
    assert len(cfg.design.psi_grid) == 11 and cfg.design.psi_interval == (0.0, 3.0)
    cfg = parse_config({"study": "brockwell-estimation", "seed": 3}, reps=7, seed=11)
    assert cfg.design.reps == 7 and cfg.design.seed == 11


def test_power_defaults():
    cfg = parse_config({"study": "brockwell-power"})
    assert cfg.design.K_list == (5, 10, 15) and cfg.design.psi_grid == (0.0, 0.025, 0.05)
    assert cfg.calibration == ("asymptotic", "exact") and len(cfg.deltas) == 10


@pytest.mark.parametrize(
    "tree, path",
    [
        ({"study": "nope"}, "study"),
        ({"study": "brockwell-coverage", "extra": 1}, "extra"),
        ({"study": "brockwell-coverage", "brockwell": {"K_list": [5, 1]}}, r"brockwell.K_list\[1\]"),
        ({"study": "brockwell-coverage", "brockwell": {"K_list": [5, 2.5]}}, r"brockwell.K_list\[1\]"),
        ({"study": "brockwell-coverage", "brockwell": {"psi_grid": []}}, "brockwell.psi_grid"),
        ({"study": "brockwell-coverage", "brockwell": {"level": 1.5}}, "brockwell.level"),
        ({"study": "brockwell-coverage", "brockwell": {"psi_interval": [1, 0]}}, "brockwell.psi_interval"),
        ({"study": "brockwell-coverage", "brockwell": {"beta": 1}}, "brockwell.beta"),
        ({"study": "brockwell-power", "brockwell": {"calibration": ["bayes"]}}, "brockwell.calibration"),
        ({"study": "brockwell-coverage", "reps": 0}, "reps"),
        ({"study": "bootstrap"}, "bootstrap"),
        ({"study": "bootstrap", "bootstrap": {"dataset": "nothing.csv"}}, "bootstrap.dataset"),
        ({"study": "bootstrap", "bootstrap": {"dataset": "cocoa", "alternative": "up"}}, "bootstrap.alternative"),
    ],
)
def test_schema_errors_name_the_path(tree, path):
    with pytest.raises(ConfigurationError, match=path):
        parse_config(tree)


def test_bootstrap_from_csv(tmp_path):
    (tmp_path / "s.csv").write_text("study,y,se,dose\na,0.1,0.2,0\nb,0.5,0.3,1\nc,0.2,0.1,2\nd,0.9,0.4,3\n")
    (tmp_path / "c.toml").write_text(
        'study = "bootstrap"\nreps = 5\n[bootstrap]\ndataset = "s.csv"\nmeasure = "se"\n'
        'covariates = ["dose"]\nbeta0 = [0.1, 0.2]\npsi0 = 0.05\nname = "mine"\n'
    )
    cfg = load_config(tmp_path / "c.toml")
    d = cfg.design
    assert isinstance(d, BootstrapDesign)
    assert d.test_index == 1 and d.name == "mine" and d.reps == 5
    assert d.theta0.psi == 0.05 and list(d.theta0.beta) == [0.1, 0.2]
    assert d.base.sigma2[0] == pytest.approx(0.04)


def test_bootstrap_test_coefficient_range(tmp_path):
    (tmp_path / "s.csv").write_text("study,y,var\na,0.1,0.2\nb,0.5,0.3\nc,0.2,0.1\n")
    with pytest.raises(ConfigurationError, match="test_coefficient"):
        parse_config(
            {"study": "bootstrap", "bootstrap": {"dataset": "s.csv", "measure": "var", "test_coefficient": 2}},
            base_dir=tmp_path,
        )


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="no such file"):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("study = \n")
    with pytest.raises(ConfigurationError):
        load_config(bad)


def test_bundled_meat_config_is_one_sided():
    from pathlib import Path

    cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "meat_boot.toml", reps=3)
    assert cfg.design.alternative == "greater" and cfg.design.test_index == 1
