"""Autograd, layers, models, fusion, training and metrics."""
