"""Multi-frame blind deconvolution without filter estimation.

Recovers an undeteriorated image from a sequence of blurry, noisy
observations via signal-subspace identification and an eigenvector method,
with a likelihood-maximization gradient ascent as a second solver and a
synthetic-data generator for end-to-end verification.
"""

__version__ = "0.1.0"
