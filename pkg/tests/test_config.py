from importlib import resources

import numpy as np
import pytest

from reachlab.config import ConfigError, load_config, parse_config
from reachlab.regions import AnnularSector, PartialTorus

MINIMAL = """\
model: planar2
curriculum:
  regions:
    - {shape: annular_sector, inner_radius: 0.5, outer_radius: 1.5, sweep_deg: 90}
"""


def test_minimal_config_uses_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.model.n == 2 and cfg.seed == 0
    assert isinstance(cfg.schedule.regions[0], AnnularSector)
    assert cfg.schedule.threshold == 0.01
    assert cfg.weights.lambda_err == 20.0 and cfg.episode.horizon_steps == 800
    assert cfg.gains.kp == 400.0 and cfg.sim.servo == "explicit"


@pytest.mark.parametrize("name", ["planar2-reach", "planar2-obstacles", "spatial6-reach"])
def test_bundled_configs_load(name):
    cfg = load_config(name)
    assert cfg.schedule.k >= 1
    assert cfg.source.endswith(f"{name}.yaml")


def test_spatial6_torus_curriculum():
    cfg = load_config("spatial6-reach")
    regions = cfg.schedule.regions
    assert all(isinstance(r, PartialTorus) for r in regions)
    assert [r.minor_radius for r in regions] == [0.15, 0.2, 0.3, 0.3]
    np.testing.assert_allclose([np.rad2deg(r.sweep_angle) for r in regions], [90, 120, 120, 180])
    assert cfg.sim.servo == "implicit"


@pytest.mark.parametrize("text,line,fragment", [
    (MINIMAL + "ppo:\n  gama: 0.9\n", 6, "unknown key ppo.gama"),
    (MINIMAL + "bogus: 1\n", 5, "unknown section"),
    (MINIMAL + "sim:\n  dt: -1\n", 6, "dt must be positive"),
    (MINIMAL + "seed: -3\n", 5, "seed must be"),
    ("model: planar2\ncurriculum:\n  regions:\n    - {shape: cone}\n", 4, "region 1"),
    ("model: planar2\ncurriculum: {}\n", 2, "curriculum.regions"),
])
def test_errors_carry_line_context(text, line, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "run.yaml")
    assert f"run.yaml:{line}" in str(err.value)
    assert fragment in str(err.value)


def test_unknown_model_is_reported():
    with pytest.raises(ConfigError, match="run.yaml:1"):
        parse_config(MINIMAL.replace("planar2", "nope7"), "run.yaml")


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.yaml")


def test_load_from_path_resolves_model_next_to_config(tmp_path):
    src = load_config("planar2-reach")
    text = resources.files("reachlab.data").joinpath("planar2.yaml").read_text().replace("mass: 1.0", "mass: 2.0")
    (tmp_path / "arm.yaml").write_text(text)
    (tmp_path / "run.yaml").write_text(MINIMAL.replace("planar2", "arm.yaml"))
    cfg = load_config(tmp_path / "run.yaml")
    np.testing.assert_allclose(cfg.model.mass, 2 * src.model.mass)
