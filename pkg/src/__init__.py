"""Allocation multiplicity simulator."""
