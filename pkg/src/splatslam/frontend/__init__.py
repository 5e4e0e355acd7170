"""Photometric tracking front-end."""
