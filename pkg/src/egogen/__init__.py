"""Egocentric point-cloud demonstration generation."""
