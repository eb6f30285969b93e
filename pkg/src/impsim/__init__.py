"""Simulated bio-impedance for activity recognition: mesh geodesics to pretrained classifiers."""

__version__ = "0.1.0"
