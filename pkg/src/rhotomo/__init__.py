"""Cone-beam CT toolkit with prior-conditioned neural attenuation fields."""
