"""Active search for fold and Hopf bifurcations with Gaussian-process surrogates."""

__version__ = "0.1.0"
