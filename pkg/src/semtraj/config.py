"""Engine-wide configuration.

All runs are driven by a single JSON document with an explicit schema
version.  ``EngineConfig.default()`` returns the shipped defaults
(``data/default_config.json``); ``EngineConfig.load(path)`` reads a user
file and validates it against the schema below.

Schema (version 1), all quantities SI unless noted:

    {
      "schema": 1,
      "freeflyer": {
        "table_bounds": [[xmin, ymin], [xmax, ymax]],   # m, position box
        "bodies": [{"center": [x, y], "radius": r}, ...] # exactly 3
        "koz_margin": gamma,          # >= 1, dimensionless
        "ff_radius": r_ff,            # m
        "mass": m,                    # kg
        "inertia": I_z,               # kg m^2
        "thruster_arm": d,            # m, torque arm of each thruster
        "thrust_accel": T_over_m,     # N/kg
        "dt": dt, "n_nodes": N,
        "start_box": [[...],[...]],   # sampled initial-position box, m
        "start_psi_range": [lo, hi],  # rad
        "goal": [x, y, psi],          # fixed terminal pose, zero rates
        "wyp_radius": r_wyp,          # m, hard passage ball
        "wyp_rho": [rho_min, rho_max],# m, annulus offsets
        "wyp_half_angle_deg": dtheta, # deg
        "wyp_node_band": [f0, f1],    # passage node ~ U[f0 N, f1 N]
        "goal_tol": eps_g,            # m, arrival tolerance
        "loiter_weight": w            # soft loitering penalty weight
      },
      "orbit": {
        "a": ..., "e": ..., "i_deg": ..., "raan_deg": ...,
        "argp_deg": ..., "mean_anom_deg": ..., "j2": true
      },
      "rpo": {
        "koz_radius": 25.0,           # m, verification sphere
        "koz_enforce_margin": 0.01,   # inflate enforced radius by 1%
        "tau_s_orbits": 1.0,          # drift horizon
        "nq": 30,                     # Gauss-Legendre nodes per panel
        "n_panels": 8,                # quadrature panels on [0, tau_s]
        "n_nodes": 50, "t_f_orbits": 5.0,
        "gtilde_tol": 1e-6            # normalized per-node safety tolerance
      },
      "scp": { ... SCVx*-style hyperparameters, see ScpConfig ... },
      "model": { "layers", "heads", "embed_dim", "context", "dropout",
                 "lr", "grad_clip", "batch", "grad_accum", "n_text" },
      "dataset": { "pairs_per_scenario", "templates_train", "templates_test" }
    }

The free-flyer thruster layout is derived from (mass, inertia,
thruster_arm): eight thrusters, two per face of a square body, each pair
producing opposing torques.  Any layout with full row rank and a
nonnegative span covering R^2 x R can be substituted via
``freeflyer.thruster_matrix``.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def _default_dict() -> dict:
    with resources.files("semtraj.data").joinpath("default_config.json").open() as f:
        return json.load(f)


@dataclass
class EngineConfig:
    """Validated configuration tree (plain nested dicts, schema above)."""

    raw: dict = field(default_factory=dict)

    @classmethod
    def default(cls) -> "EngineConfig":
        return cls(_default_dict()).validate()

    @classmethod
    def load(cls, path: str) -> "EngineConfig":
        with open(path) as f:
            raw = json.load(f)
        base = _default_dict()
        _deep_update(base, raw)
        return cls(base).validate()

    def dump(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.raw, f, indent=2, sort_keys=True)
            f.write("\n")

    def validate(self) -> "EngineConfig":
        r = self.raw
        if r.get("schema") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema {r.get('schema')!r}, expected {SCHEMA_VERSION}")
        ff = r["freeflyer"]
        if len(ff["bodies"]) != 3:
            raise ConfigError("freeflyer scenario expects exactly three bodies")
        for b in ff["bodies"]:
            if b["radius"] <= 0:
                raise ConfigError("body radius must be positive")
        if ff["koz_margin"] < 1.0:
            raise ConfigError("koz_margin must be >= 1")
        orb = r["orbit"]
        if not (orb["a"] > 6378137.0 and 0.0 <= orb["e"] < 1.0):
            raise ConfigError("orbit must satisfy a > R_earth and 0 <= e < 1")
        rpo = r["rpo"]
        if rpo["nq"] < 1 or rpo["n_panels"] < 1:
            raise ConfigError("quadrature settings must be positive")
        scp = r["scp"]
        if not (0.0 <= scp["rho0"] < scp["rho1"] < scp["rho2"] < 1.0):
            raise ConfigError("require 0 <= rho0 < rho1 < rho2 < 1")
        if not (scp["r_min"] <= scp["r_init"] <= scp["r_max"]):
            raise ConfigError("require r_min <= r_init <= r_max")
        return self

    # Convenience accessors -------------------------------------------------
    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    @property
    def koz_radius_ff(self) -> float:
        ff = self.raw["freeflyer"]
        return ff["koz_margin"] * (ff["bodies"][0]["radius"] + ff["ff_radius"])

    @property
    def orbit_period(self) -> float:
        from .constants import MU_EARTH

        a = self.raw["orbit"]["a"]
        return 2.0 * math.pi * math.sqrt(a**3 / MU_EARTH)

    def copy(self) -> "EngineConfig":
        return EngineConfig(copy.deepcopy(self.raw))


def _deep_update(base: dict, other: dict) -> None:
    for k, v in other.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
