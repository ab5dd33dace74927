"""Shared physical constants."""

# Speed of light in vacuum, m/s (exact). Every delay/distance conversion in
# the package goes through this single value.
C = 299792458.0
