"""Numerical core: schedule, networks, samplers, tiling, long-video planning, training and metrics."""
