"""Drift-tilted random walks in random potentials: exact enumeration, renewal structure and Monte Carlo."""
