"""Gaussian map storage and optimization."""
