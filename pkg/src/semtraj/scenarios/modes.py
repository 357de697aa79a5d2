"""Behavior modes and problem-instance sampling.

Twelve modes, six per scenario, shipped as a versioned data file.  Free
flyer modes combine a passage side (left / right / central) with a tempo
(fast / slow); proximity-operation modes are defined by waypoint sets in
scaled qnsROE coordinates sampled on 21-value grids, with the passage
node drawn uniformly from the listed range.

Node/orbit convention for the proximity scenario: 1-based node k maps to
k/10 orbits in command text (N = 50 nodes over 5 orbits); instances
store 0-based node indices internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np


def load_modes() -> dict:
    with resources.files("semtraj.data").joinpath("behavior_modes.json").open() as f:
        return json.load(f)


_MODES = None


def _tables() -> dict:
    global _MODES
    if _MODES is None:
        _MODES = load_modes()
    return _MODES


@dataclass(frozen=True)
class BehaviorMode:
    scenario: str            # "freeflyer" | "rpo"
    id: int
    name: str
    tempo: str | None = None
    passage: str | None = None
    waypoints: tuple = ()    # rpo: raw spec dicts from the table
    terminal: dict | None = None
    placeholders: tuple[str, ...] = ()

    @classmethod
    def get(cls, scenario: str, mode_id: int) -> "BehaviorMode":
        t = _tables()
        if scenario == "freeflyer":
            row = t["freeflyer"][mode_id]
            if row["id"] != mode_id:
                raise ValueError("behavior table out of order")
            return cls(
                scenario=scenario, id=mode_id, name=row["name"],
                tempo=row["tempo"], passage=row["passage"],
            )
        if scenario == "rpo":
            row = t["rpo"][mode_id]
            if row["id"] != mode_id:
                raise ValueError("behavior table out of order")
            return cls(
                scenario=scenario, id=mode_id, name=row["name"],
                waypoints=tuple(row["waypoints"]), terminal=row["terminal"],
                placeholders=tuple(row["placeholders"]),
            )
        raise ValueError(f"unknown scenario {scenario!r}")


@dataclass
class RealizedWaypoint:
    """One sampled waypoint: 0-based node index and its target value."""

    idx: int
    value: np.ndarray
    delta: np.ndarray
    epoch_placeholder: str | None = None
    dlambda_placeholder: str | None = None

    @property
    def orbits(self) -> float:
        return round((self.idx + 1) / 10.0, 1)


@dataclass
class ProblemInstance:
    """Everything needed to pose one trajectory optimization problem."""

    scenario: str
    behavior: int
    seed: int
    horizon: int
    dt: float
    x_init: np.ndarray
    x_goal: np.ndarray | None = None            # freeflyer full state
    waypoint: np.ndarray | None = None          # freeflyer ROI center (2,)
    k_wyp: int | None = None                    # freeflyer passage node (0-based)
    waypoints: list[RealizedWaypoint] = field(default_factory=list)  # rpo
    terminal: RealizedWaypoint | None = None    # rpo

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.horizon) * self.dt

    def to_dict(self) -> dict:
        def wyp(w):
            return None if w is None else {
                "idx": w.idx, "value": w.value.tolist(), "delta": w.delta.tolist(),
                "epoch_placeholder": w.epoch_placeholder,
                "dlambda_placeholder": w.dlambda_placeholder,
            }

        return {
            "scenario": self.scenario, "behavior": self.behavior, "seed": self.seed,
            "horizon": self.horizon, "dt": self.dt,
            "x_init": self.x_init.tolist(),
            "x_goal": None if self.x_goal is None else self.x_goal.tolist(),
            "waypoint": None if self.waypoint is None else self.waypoint.tolist(),
            "k_wyp": self.k_wyp,
            "waypoints": [wyp(w) for w in self.waypoints],
            "terminal": wyp(self.terminal),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemInstance":
        def wyp(w):
            return None if w is None else RealizedWaypoint(
                idx=w["idx"], value=np.asarray(w["value"]), delta=np.asarray(w["delta"]),
                epoch_placeholder=w.get("epoch_placeholder"),
                dlambda_placeholder=w.get("dlambda_placeholder"),
            )

        return cls(
            scenario=d["scenario"], behavior=d["behavior"], seed=d["seed"],
            horizon=d["horizon"], dt=d["dt"],
            x_init=np.asarray(d["x_init"]),
            x_goal=None if d.get("x_goal") is None else np.asarray(d["x_goal"]),
            waypoint=None if d.get("waypoint") is None else np.asarray(d["waypoint"]),
            k_wyp=d.get("k_wyp"),
            waypoints=[wyp(w) for w in d.get("waypoints", [])],
            terminal=wyp(d.get("terminal")),
        )


def _grid21(rng: np.random.Generator, center: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Per-component draw from the 21-value grid on [center - d, center + d]."""
    offsets = rng.integers(0, 21, size=len(center))
    return center + delta * (offsets / 10.0 - 1.0)


def sample_instance(mode: BehaviorMode, seed: int, cfg) -> ProblemInstance:
    """Reproducible instance draw for either scenario."""
    rng = np.random.default_rng(seed)
    if mode.scenario == "freeflyer":
        ff = cfg["freeflyer"]
        lo, hi = np.asarray(ff["start_box"][0]), np.asarray(ff["start_box"][1])
        p0 = rng.uniform(lo, hi)
        psi0 = rng.uniform(*ff["start_psi_range"])
        x_init = np.array([p0[0], p0[1], psi0, 0.0, 0.0, 0.0])
        gx, gy, gpsi = ff["goal"]
        x_goal = np.array([gx, gy, gpsi, 0.0, 0.0, 0.0])
        dt = ff["dt"]
        if mode.tempo == "fast":
            lo_f, hi_f = ff["fast_tf_fraction"]
            tf = rng.uniform(lo_f, hi_f) * ff["n_nodes"] * dt
            horizon = int(math.floor(tf / dt))
        else:
            horizon = int(ff["n_nodes"])
        waypoint = None
        k_wyp = None
        if mode.passage in ("left", "right"):
            body = 0 if mode.passage == "left" else 2
            centers = np.asarray([b["center"] for b in ff["bodies"]])
            koz = ff["koz_margin"] * (ff["bodies"][body]["radius"] + ff["ff_radius"])
            bearing = math.atan2(
                centers[1][1] - centers[body][1], centers[1][0] - centers[body][0]
            )
            half = math.radians(ff["wyp_half_angle_deg"])
            theta = rng.uniform(bearing - half, bearing + half)
            rho = rng.uniform(*ff["wyp_rho"])
            waypoint = centers[body] + (koz + rho) * np.array([math.cos(theta), math.sin(theta)])
            b_lo, b_hi = ff["wyp_node_band"]
            k_wyp = int(rng.integers(int(b_lo * horizon), int(b_hi * horizon) + 1))
        return ProblemInstance(
            scenario="freeflyer", behavior=mode.id, seed=seed, horizon=horizon, dt=dt,
            x_init=x_init, x_goal=x_goal, waypoint=waypoint, k_wyp=k_wyp,
        )

    if mode.scenario == "rpo":
        t = _tables()
        init = t["rpo_initial"]
        x_init = _grid21(rng, np.asarray(init["center"], float), np.asarray(init["delta"], float))
        n_nodes = int(cfg["rpo"]["n_nodes"])
        period = 2.0 * math.pi * math.sqrt(cfg["orbit"]["a"] ** 3 / 3.986004418e14)
        tf = cfg["rpo"]["t_f_orbits"] * period
        dt = tf / (n_nodes - 1)
        wyps = []
        for spec in mode.waypoints:
            k = int(rng.integers(spec["k_range"][0], spec["k_range"][1] + 1))
            value = _grid21(rng, np.asarray(spec["center"], float), np.asarray(spec["delta"], float))
            wyps.append(
                RealizedWaypoint(
                    idx=k - 1, value=value, delta=np.asarray(spec["delta"], float),
                    epoch_placeholder=spec.get("epoch_placeholder"),
                    dlambda_placeholder=spec.get("dlambda_placeholder"),
                )
            )
        term_spec = mode.terminal
        terminal = RealizedWaypoint(
            idx=term_spec["k"] - 1,
            value=_grid21(rng, np.asarray(term_spec["center"], float), np.asarray(term_spec["delta"], float)),
            delta=np.asarray(term_spec["delta"], float),
        )
        return ProblemInstance(
            scenario="rpo", behavior=mode.id, seed=seed, horizon=n_nodes, dt=dt,
            x_init=x_init, waypoints=wyps, terminal=terminal,
        )

    raise ValueError(f"unknown scenario {mode.scenario!r}")
