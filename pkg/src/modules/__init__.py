"""Core modules for the allocation multiplicity simulator."""
