"""Segmented exponential growth fits for annual count series."""
