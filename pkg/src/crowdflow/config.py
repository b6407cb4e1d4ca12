"""Scenario configuration: TOML parsing, strict validation, and assembly
of runnable scenarios.

Configs are TOML files of key = value sections.  Unknown keys are
rejected; constraint violations report the offending key path.  TOML
syntax errors carry the parser's line/column information.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import confinement as conf
from .dynamics import AgentState, LeaderTrack, ModelSpec, SpeedLaw
from .eikonal import geodesic_directions, solve_eikonal
from .grid import (Disc, Rect, gaussian_datum, indicator_datum,
                   rasterize_geometry)
from .kernels import build_kernel
from .solver import Scenario, SchemeParams


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "domain": {"bounds"},
    "grid": {"dx"},
    "model": {"type", "epsilon", "perp_sign", "populations"},
    "speed": {"family", "vmax", "jam", "rho", "v"},
    "kernel": {"profile", "radius", "normalized", "r", "eta"},
    "geometry": {"obstacles", "exits"},
    "direction": {"mode", "vector"},
    "initial": {"populations"},
    "agents": {"role", "positions", "waypoints"},
    "scheme": {"cfl", "dt_max", "t_end", "snapshot_dt", "stop_theta", "fixed_dt"},
    "output": {"csv", "pgm", "metrics"},
    "braess": {"columns", "theta"},
    "gateaux": {"h", "t_end", "fixed_dt", "direction_center", "direction_sigma",
                "direction_amplitude"},
    "confinement": {"psi", "c", "k0", "track", "domain", "dx", "t_end",
                    "snapshot_dt", "rstar", "sigma_max", "sigma_samples"},
}

_OBSTACLE_KEYS = {"kind", "rect", "center", "radius"}
_EXIT_KEYS = {"rect"}
_POPULATION_KEYS = {"kind", "rect", "level", "center", "sigma", "amplitude"}
_PSI_KEYS = {"family", "value", "r", "psi"}
_K0_KEYS = {"kind", "center", "radius", "rect"}
_TRACK_KEYS = {"kind", "radius", "omega", "phase", "center", "waypoints", "times"}


def _reject_unknown(table: dict, allowed: set, path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{path}.{key}'" if path else
                              f"unknown key '{key}'")


def _need(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"missing required key '{path}.{key}'")
    return table[key]


def _rect(seq, path: str) -> Rect:
    try:
        x0, x1, y0, y1 = (float(v) for v in seq)
    except (TypeError, ValueError):
        raise ConfigError(f"'{path}' must be [x0, x1, y0, y1]") from None
    if x1 <= x0 or y1 <= y0:
        raise ConfigError(f"'{path}' is degenerate: {seq}")
    return Rect(x0, x1, y0, y1)


def _shape(tab: dict, path: str):
    _reject_unknown(tab, _OBSTACLE_KEYS, path)
    kind = tab.get("kind", "rect")
    if kind == "rect":
        return _rect(_need(tab, "rect", path), f"{path}.rect")
    if kind == "disc":
        cx, cy = (float(v) for v in _need(tab, "center", path))
        radius = float(_need(tab, "radius", path))
        if radius <= 0:
            raise ConfigError(f"'{path}.radius' must be positive")
        return Disc(cx, cy, radius)
    raise ConfigError(f"'{path}.kind' must be 'rect' or 'disc', got {kind!r}")


@dataclass
class ConfinementSpec:
    psi: conf.PsiProfile
    c: float
    k0: object                 # Rect or Disc
    track: conf.AgentTrack | None
    domain: Rect
    dx: float
    t_end: float
    snapshot_dt: float | None
    rstar: tuple[float, float] | None
    sigma_max: float
    sigma_samples: int


@dataclass
class ScenarioConfig:
    """Validated configuration; build_scenario() turns it into a runnable
    problem (rasterization + direction field are deferred to build)."""
    raw_text: str
    domain: Rect | None
    dx: float | None
    model_type: str | None
    epsilon: float
    perp_sign: float
    law: SpeedLaw | None
    kernel_spec: dict | None
    obstacles: list = field(default_factory=list)
    exits: list = field(default_factory=list)
    direction_mode: str = "geodesic"
    direction_vector: tuple[float, float] = (1.0, 0.0)
    populations: list = field(default_factory=list)
    agents_role: str | None = None
    agents_positions: np.ndarray | None = None
    agents_waypoints: np.ndarray | None = None
    scheme: SchemeParams | None = None
    output: dict = field(default_factory=dict)
    braess_columns: list = field(default_factory=list)
    braess_theta: float = 0.999
    gateaux: dict | None = None
    confinement: ConfinementSpec | None = None


def parse_config(text: str) -> ScenarioConfig:
    """Parse and fully validate a scenario configuration."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    _reject_unknown(data, set(_SCHEMA), "")
    for section, keys in _SCHEMA.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"'{section}' must be a table")
            _reject_unknown(data[section], keys, section)

    cfg = ScenarioConfig(raw_text=text, domain=None, dx=None, model_type=None,
                         epsilon=0.0, perp_sign=1.0, law=None, kernel_spec=None)

    if "domain" in data:
        cfg.domain = _rect(_need(data["domain"], "bounds", "domain"), "domain.bounds")
    if "grid" in data:
        cfg.dx = float(_need(data["grid"], "dx", "grid"))
        if cfg.dx <= 0:
            raise ConfigError("'grid.dx' must be positive")

    wants_simulation = any(s in data for s in
                           ("model", "speed", "geometry", "initial", "scheme"))
    if wants_simulation:
        if "model" not in data:
            raise ConfigError("missing model: a simulation config needs a [model] table")
        mt = data["model"]
        cfg.model_type = _need(mt, "type", "model")
        if cfg.model_type not in ("local", "S", "R", "piper", "shepherd"):
            raise ConfigError(f"'model.type' must be one of local/S/R/piper/shepherd, "
                              f"got {cfg.model_type!r}")
        cfg.epsilon = float(mt.get("epsilon", 0.0))
        if cfg.epsilon < 0:
            raise ConfigError("'model.epsilon' must be >= 0")
        cfg.perp_sign = float(mt.get("perp_sign", 1.0))
        if cfg.domain is None or cfg.dx is None:
            raise ConfigError("simulation configs need [domain].bounds and [grid].dx")

        sp = data.get("speed", {})
        family = sp.get("family", "linear")
        try:
            if family == "linear":
                cfg.law = SpeedLaw(family="linear", vmax=float(sp.get("vmax", 6.0)),
                                   jam=float(sp.get("jam", 1.0)))
            else:
                cfg.law = SpeedLaw(family="tabulated",
                                   table_rho=np.asarray(_need(sp, "rho", "speed"), float),
                                   table_v=np.asarray(_need(sp, "v", "speed"), float))
        except ValueError as exc:
            raise ConfigError(f"speed: {exc}") from None

        if "kernel" in data:
            kt = data["kernel"]
            cfg.kernel_spec = {
                "profile": kt.get("profile", "poly3"),
                "radius": float(_need(kt, "radius", "kernel")),
                "normalized": bool(kt.get("normalized", False)),
                "table": ((np.asarray(kt["r"], float), np.asarray(kt["eta"], float))
                          if "r" in kt else None),
            }
        if cfg.model_type in ("S", "R", "piper", "shepherd") and cfg.kernel_spec is None:
            raise ConfigError(f"model '{cfg.model_type}' requires a [kernel] table")

        geo = data.get("geometry", {})
        cfg.obstacles = [_shape(t, f"geometry.obstacles[{i}]")
                         for i, t in enumerate(geo.get("obstacles", []))]
        for i, t in enumerate(geo.get("exits", [])):
            _reject_unknown(t, _EXIT_KEYS, f"geometry.exits[{i}]")
            cfg.exits.append(_rect(_need(t, "rect", f"geometry.exits[{i}]"),
                                   f"geometry.exits[{i}].rect"))

        dirn = data.get("direction", {})
        cfg.direction_mode = dirn.get("mode", "geodesic")
        if cfg.direction_mode not in ("geodesic", "uniform"):
            raise ConfigError("'direction.mode' must be 'geodesic' or 'uniform'")
        if cfg.direction_mode == "uniform":
            vec = dirn.get("vector", [1.0, 0.0])
            norm = float(np.hypot(vec[0], vec[1]))
            if norm == 0:
                raise ConfigError("'direction.vector' must be nonzero")
            cfg.direction_vector = (float(vec[0]) / norm, float(vec[1]) / norm)
        elif not cfg.exits and cfg.model_type not in ("piper",):
            raise ConfigError("geodesic direction mode needs at least one exit "
                              "(or use direction.mode = 'uniform')")

        if "initial" not in data or not data["initial"].get("populations"):
            raise ConfigError("missing initial data: need [[initial.populations]]")
        for i, pop in enumerate(data["initial"]["populations"]):
            path = f"initial.populations[{i}]"
            _reject_unknown(pop, _POPULATION_KEYS, path)
            kind = pop.get("kind", "rectangle")
            if kind == "rectangle":
                level = float(_need(pop, "level", path))
                if level < 0:
                    raise ConfigError(f"'{path}.level' must be >= 0")
                cfg.populations.append(("rectangle",
                                        _rect(_need(pop, "rect", path), f"{path}.rect"),
                                        level))
            elif kind == "gaussian":
                cx, cy = (float(v) for v in _need(pop, "center", path))
                sigma = float(_need(pop, "sigma", path))
                amp = float(_need(pop, "amplitude", path))
                if sigma <= 0 or amp < 0:
                    raise ConfigError(f"'{path}': need sigma > 0 and amplitude >= 0")
                cfg.populations.append(("gaussian", (cx, cy), sigma, amp))
            else:
                raise ConfigError(f"'{path}.kind' must be 'rectangle' or 'gaussian'")

        if "agents" in data:
            ag = data["agents"]
            cfg.agents_role = _need(ag, "role", "agents")
            if cfg.agents_role not in ("leader", "dogs"):
                raise ConfigError("'agents.role' must be 'leader' or 'dogs'")
            cfg.agents_positions = np.asarray(_need(ag, "positions", "agents"), float)
            if cfg.agents_positions.ndim != 2 or cfg.agents_positions.shape[1] != 2:
                raise ConfigError("'agents.positions' must be a list of [x, y] pairs")
            if "waypoints" in ag:
                cfg.agents_waypoints = np.asarray(ag["waypoints"], float)
        if cfg.model_type == "piper":
            if cfg.agents_role != "leader" or len(cfg.agents_positions) != 1:
                raise ConfigError("piper model needs [agents] with role='leader' "
                                  "and exactly one position")
            if cfg.agents_waypoints is None:
                raise ConfigError("piper model needs 'agents.waypoints'")
        if cfg.model_type == "shepherd" and cfg.agents_role not in (None, "dogs"):
            raise ConfigError("shepherd model agents must have role='dogs'")

        sc = data.get("scheme", {})
        try:
            cfg.scheme = SchemeParams(
                cfl=float(sc.get("cfl", 0.45)),
                dt_max=float(sc.get("dt_max", 0.01)),
                t_end=float(sc.get("t_end", 1.0)),
                snapshot_dt=(float(sc["snapshot_dt"]) if "snapshot_dt" in sc else None),
                stop_theta=(float(sc["stop_theta"]) if "stop_theta" in sc else None),
                fixed_dt=(float(sc["fixed_dt"]) if "fixed_dt" in sc else None))
        except ValueError as exc:
            raise ConfigError(f"scheme: {exc}") from None

        cfg.output = {"csv": bool(data.get("output", {}).get("csv", True)),
                      "pgm": bool(data.get("output", {}).get("pgm", False)),
                      "metrics": bool(data.get("output", {}).get("metrics", True))}

        if "braess" in data:
            cols = _need(data["braess"], "columns", "braess")
            cfg.braess_columns = [_rect(cc, f"braess.columns[{i}]")
                                  for i, cc in enumerate(cols)]
            cfg.braess_theta = float(data["braess"].get("theta", 0.999))
            if not (0 < cfg.braess_theta <= 1):
                raise ConfigError("'braess.theta' must be in (0, 1]")

        if "gateaux" in data:
            gt = data["gateaux"]
            h = [float(v) for v in _need(gt, "h", "gateaux")]
            if any(v <= 0 for v in h):
                raise ConfigError("'gateaux.h' must be positive")
            if sorted(h, reverse=True) != h:
                raise ConfigError("'gateaux.h' must be decreasing")
            cfg.gateaux = {
                "h": h,
                "t_end": float(_need(gt, "t_end", "gateaux")),
                "fixed_dt": float(_need(gt, "fixed_dt", "gateaux")),
                "center": tuple(float(v) for v in gt.get("direction_center", (0.0, 0.0))),
                "sigma": float(gt.get("direction_sigma", 0.5)),
                "amplitude": float(gt.get("direction_amplitude", 0.1)),
            }
            if cfg.model_type != "S":
                raise ConfigError("the sensitivity check requires model.type = 'S'")

    if "confinement" in data:
        ct = data["confinement"]
        psi_tab = _need(ct, "psi", "confinement")
        _reject_unknown(psi_tab, _PSI_KEYS, "confinement.psi")
        try:
            psi = conf.PsiProfile(
                family=_need(psi_tab, "family", "confinement.psi"),
                value=float(psi_tab.get("value", 0.0)),
                table_r=(np.asarray(psi_tab["r"], float) if "r" in psi_tab else None),
                table_psi=(np.asarray(psi_tab["psi"], float)
                           if "psi" in psi_tab else None))
        except ValueError as exc:
            raise ConfigError(f"confinement.psi: {exc}") from None
        c = float(_need(ct, "c", "confinement"))
        if c < 0:
            raise ConfigError("'confinement.c' must be >= 0")
        k0_tab = _need(ct, "k0", "confinement")
        _reject_unknown(k0_tab, _K0_KEYS, "confinement.k0")
        k0 = _shape(k0_tab, "confinement.k0")
        track = None
        if "track" in ct:
            tr = ct["track"]
            _reject_unknown(tr, _TRACK_KEYS, "confinement.track")
            kind = _need(tr, "kind", "confinement.track")
            if kind == "orbit":
                track = conf.orbit_strategy(
                    radius=float(_need(tr, "radius", "confinement.track")),
                    omega=float(tr.get("omega", 1.0)),
                    phase=float(tr.get("phase", 0.0)),
                    center=tuple(tr.get("center", (0.0, 0.0))))
            elif kind == "waypoints":
                track = conf.AgentTrack(
                    kind="waypoints",
                    waypoints=np.asarray(_need(tr, "waypoints", "confinement.track"), float),
                    times=np.asarray(_need(tr, "times", "confinement.track"), float))
            else:
                raise ConfigError("'confinement.track.kind' must be 'orbit' or 'waypoints'")
        dom = _rect(_need(ct, "domain", "confinement"), "confinement.domain")
        dx = float(_need(ct, "dx", "confinement"))
        if dx <= 0:
            raise ConfigError("'confinement.dx' must be positive")
        rstar = None
        if "rstar" in ct:
            lo, hi = (float(v) for v in ct["rstar"])
            if not (0 < lo <= hi):
                raise ConfigError("'confinement.rstar' must be [lo, hi] with 0 < lo <= hi")
            rstar = (lo, hi)
        cfg.confinement = ConfinementSpec(
            psi=psi, c=c, k0=k0, track=track, domain=dom, dx=dx,
            t_end=float(ct.get("t_end", 1.0)),
            snapshot_dt=(float(ct["snapshot_dt"]) if "snapshot_dt" in ct else None),
            rstar=rstar,
            sigma_max=float(ct.get("sigma_max", 20.0)),
            sigma_samples=int(ct.get("sigma_samples", 2000)))

    if cfg.model_type is None and cfg.confinement is None:
        raise ConfigError("missing model: config defines neither a [model] "
                          "nor a [confinement] problem")
    return cfg


def build_scenario(cfg: ScenarioConfig, extra_obstacles=()) -> Scenario:
    """Rasterize the geometry, solve the routing field and assemble a
    runnable scenario from a parsed config."""
    if cfg.model_type is None:
        raise ConfigError("config has no [model] section to simulate")
    obstacles = list(cfg.obstacles) + list(extra_obstacles)
    geometry = rasterize_geometry(cfg.domain, obstacles, cfg.exits, cfg.dx)
    grid = geometry.grid

    kernel = None
    if cfg.kernel_spec is not None:
        kernel = build_kernel(cfg.kernel_spec["profile"], cfg.kernel_spec["radius"],
                              cfg.kernel_spec["normalized"], grid,
                              table=cfg.kernel_spec["table"])

    if cfg.direction_mode == "uniform":
        nu = np.zeros(grid.shape + (2,))
        nu[geometry.free | geometry.exit] = cfg.direction_vector
    elif cfg.model_type == "piper" and not cfg.exits:
        nu = np.zeros(grid.shape + (2,))   # piper steers by the leader alone
    else:
        nu = geodesic_directions(solve_eikonal(geometry), geometry)

    densities = []
    for pop in cfg.populations:
        if pop[0] == "rectangle":
            rho = indicator_datum(grid, pop[1], pop[2])
        else:
            (cx, cy), sigma, amp = pop[1], pop[2], pop[3]
            rho = gaussian_datum(grid, cx, cy, sigma, amp)
        densities.append(np.where(geometry.free, rho, 0.0))

    agents = None
    if cfg.agents_positions is not None:
        track = (LeaderTrack(cfg.agents_waypoints)
                 if cfg.agents_waypoints is not None else None)
        agents = AgentState(positions=cfg.agents_positions.copy(),
                            role=("leader" if cfg.agents_role == "leader" else "dog"),
                            track=track)

    model = ModelSpec(model=cfg.model_type, law=cfg.law, kernel=kernel,
                      epsilon=cfg.epsilon, n_populations=len(densities),
                      perp_sign=cfg.perp_sign)
    return Scenario(geometry=geometry, nu=nu, model=model, densities=densities,
                    agents=agents, params=cfg.scheme)
