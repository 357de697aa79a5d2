"""Physical constants (SI unless noted)."""

MU_EARTH = 3.986004418e14  # m^3/s^2
R_EARTH = 6378137.0        # m, equatorial
J2_EARTH = 1.08262668e-3   # unitless
