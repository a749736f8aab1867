"""cflow: train 2D generative flows and unlearn targeted regions of them.

The package trains continuous-time flows by velocity-field regression and
removes targeted regions from a trained model by reweighting the training
objective with a scalar energy field, without needing samples of the
content to remove. It ships the four 2D benchmark generators, analytic
and classifier-derived energies, exact minibatch OT coupling, an MMD /
classifier metric suite, and a reproducible experiment harness.
"""

from . import datasets, diffcore, energy, flow, harness, metrics

__all__ = ["datasets", "diffcore", "energy", "flow", "harness", "metrics"]
__version__ = "0.1.0"
