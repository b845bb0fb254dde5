"""Diffusion index forecasting with PCA, ridge and random projections."""
