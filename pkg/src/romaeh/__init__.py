"""Reduced-order asymptotic homogenization for fiber composites."""
