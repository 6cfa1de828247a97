"""Epidemic tracking from partial proximity and symptom observations.

Core pieces: stochastic kinetic models (skm), a plain-text reaction
grammar (dsl), per-person epidemic and movement dynamics (epidemic,
mobility), noisy observation channels (observe), particle filtering,
smoothing, rate learning and prediction (infer), and evaluation
protocols (evaluate, experiments).
"""

__version__ = "0.1.0"
