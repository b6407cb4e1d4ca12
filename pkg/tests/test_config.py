from importlib import resources

import numpy as np
import pytest

from crowdflow.config import ConfigError, build_scenario, parse_config
from crowdflow.grid import Disc, Rect

MINIMAL = """
[domain]
bounds = [0.0, 2.0, 0.0, 1.0]
[grid]
dx = 0.1
[model]
type = "local"
[geometry]
exits = [{ rect = [1.9, 2.0, 0.25, 0.75] }]
[[initial.populations]]
kind = "rectangle"
rect = [0.2, 0.8, 0.2, 0.8]
level = 0.5
[scheme]
t_end = 0.5
"""


def test_parse_minimal_and_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.model_type == "local"
    assert cfg.law.vmax == 6.0 and cfg.law.jam == 1.0
    assert cfg.direction_mode == "geodesic"
    assert cfg.scheme.cfl == 0.45
    assert cfg.output == {"csv": True, "pgm": False, "metrics": True}
    scn = build_scenario(cfg)
    assert scn.geometry.grid.shape == (20, 10)
    assert len(scn.densities) == 1
    assert scn.densities[0].max() == 0.5


def test_syntax_error_reports_location():
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("[domain\nbounds = 3")


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key 'turbo'"):
        parse_config(MINIMAL + "\n[turbo]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown key 'grid.dy'"):
        parse_config(MINIMAL.replace("dx = 0.1", "dx = 0.1\ndy = 0.1"))
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(MINIMAL.replace("level = 0.5", "level = 0.5\nspin = 1"))


def test_missing_model_and_initial():
    with pytest.raises(ConfigError, match="missing model"):
        parse_config("[scheme]\nt_end = 1.0\n")
    with pytest.raises(ConfigError, match="missing model"):
        parse_config("[domain]\nbounds = [0.0, 1.0, 0.0, 1.0]\n")
    no_init = MINIMAL.replace("[[initial.populations]]", "[[initial.nope]]")
    with pytest.raises(ConfigError):
        parse_config(no_init)


def test_model_validation():
    with pytest.raises(ConfigError, match="model.type"):
        parse_config(MINIMAL.replace('type = "local"', 'type = "warp"'))
    with pytest.raises(ConfigError, match="epsilon"):
        parse_config(MINIMAL.replace('type = "local"',
                                     'type = "local"\nepsilon = -1.0'))
    with pytest.raises(ConfigError, match="requires a \\[kernel\\]"):
        parse_config(MINIMAL.replace('type = "local"', 'type = "S"'))


def test_direction_validation():
    no_exit = MINIMAL.replace(
        "exits = [{ rect = [1.9, 2.0, 0.25, 0.75] }]", "exits = []")
    with pytest.raises(ConfigError, match="geodesic"):
        parse_config(no_exit)
    uni = no_exit + "\n[direction]\nmode = \"uniform\"\nvector = [3.0, 4.0]\n"
    cfg = parse_config(uni)
    assert cfg.direction_vector == pytest.approx((0.6, 0.8))
    with pytest.raises(ConfigError, match="nonzero"):
        parse_config(no_exit + "\n[direction]\nmode = \"uniform\"\nvector = [0.0, 0.0]\n")


def test_geometry_shapes():
    txt = MINIMAL.replace(
        "exits =",
        'obstacles = [{ rect = [0.9, 1.1, 0.0, 0.6] }, '
        '{ kind = "disc", center = [1.5, 0.5], radius = 0.2 }]\nexits =')
    cfg = parse_config(txt)
    assert isinstance(cfg.obstacles[0], Rect)
    assert isinstance(cfg.obstacles[1], Disc)
    with pytest.raises(ConfigError, match="degenerate"):
        parse_config(MINIMAL.replace("[1.9, 2.0, 0.25, 0.75]",
                                     "[2.0, 1.9, 0.25, 0.75]"))


def test_piper_requires_leader_and_waypoints():
    piper = MINIMAL.replace('type = "local"', 'type = "piper"') + """
[kernel]
profile = "poly3"
radius = 0.3
normalized = true
"""
    with pytest.raises(ConfigError, match="piper"):
        parse_config(piper)
    ok = piper + """
[agents]
role = "leader"
positions = [[0.5, 0.5]]
waypoints = [[0.5, 0.5], [1.5, 0.5]]
"""
    cfg = parse_config(ok)
    assert cfg.agents_role == "leader"
    assert cfg.agents_waypoints.shape == (2, 2)


def test_gateaux_validation():
    base = MINIMAL.replace('type = "local"', 'type = "S"') + """
[kernel]
profile = "poly3"
radius = 0.3
normalized = true
"""
    with pytest.raises(ConfigError, match="decreasing"):
        parse_config(base + "\n[gateaux]\nh = [0.1, 0.2]\nt_end = 0.5\nfixed_dt = 0.01\n")
    cfg = parse_config(base + "\n[gateaux]\nh = [0.1, 0.05]\nt_end = 0.5\nfixed_dt = 0.01\n")
    assert cfg.gateaux["h"] == [0.1, 0.05]
    local = MINIMAL + "\n[gateaux]\nh = [0.1]\nt_end = 0.5\nfixed_dt = 0.01\n"
    with pytest.raises(ConfigError, match="model.type = 'S'"):
        parse_config(local)


CONFINE = """
[confinement]
c = 0.5
domain = [-3.0, 3.0, -3.0, 3.0]
dx = 0.1
t_end = 2.0
rstar = [0.6, 6.0]

[confinement.psi]
family = "constant"
value = -1.0

[confinement.k0]
kind = "disc"
center = [0.0, 0.0]
radius = 1.0

[confinement.track]
kind = "orbit"
radius = 1.0
"""


def test_confinement_parsing():
    cfg = parse_config(CONFINE)
    spec = cfg.confinement
    assert spec.c == 0.5 and spec.dx == 0.1
    assert spec.track.kind == "orbit" and spec.track.radius == 1.0
    assert spec.rstar == (0.6, 6.0)
    assert spec.psi(3.0) == -1.0
    with pytest.raises(ConfigError, match="rstar"):
        parse_config(CONFINE.replace("rstar = [0.6, 6.0]", "rstar = [0.0, 6.0]"))
    with pytest.raises(ConfigError, match="'confinement.c'"):
        parse_config(CONFINE.replace("c = 0.5", "c = -0.5"))
    # a pure confinement config cannot be built as a simulation
    with pytest.raises(ConfigError, match="no \\[model\\]"):
        build_scenario(cfg)


BUNDLED = ["braess.toml", "confine_orbit.toml", "disperse.toml",
           "evacuation.toml", "gateaux.toml", "piper.toml",
           "shepherd.toml", "smoke.toml"]


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_parse_and_build(name):
    text = (resources.files("crowdflow") / "scenarios" / name).read_text()
    cfg = parse_config(text)
    if cfg.model_type is not None:
        scn = build_scenario(cfg)
        assert scn.geometry.free.any()
        assert all(np.all(rho >= 0) for rho in scn.densities)
        assert np.isfinite(scn.nu).all()
    else:
        assert cfg.confinement is not None
