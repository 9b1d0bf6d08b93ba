"""Toolkit for fitting transistor current/charge surfaces with spline and
Fourier networks, plus extraction of closed-form approximations.

Submodules:
    splines     uniform B-spline bases, activations, grid refinement
    diffengine  reverse-mode autodiff tape over numpy arrays
    device      synthetic FinFET-like surrogate and voltage-grid datasets
    networks    MLP / spline-network / Fourier-network parameter containers
    training    losses, Adam and LBFGS loops, refinement ladder training
    symbolic    per-edge function fitting and formula extraction
    evaluate    error metrics, derivative sweeps, report generation
    cli         command-line entry points
"""

__version__ = "0.1.0"
