# Quasi-periodic spectral fields and Euler flows on R^n
__version__ = "1.0.0"
