"""Physical constants shared across the toolkit (SI units)."""

C0 = 299792458.0  # speed of light, m/s
ETA0 = 376.730313668  # free-space wave impedance, ohm
