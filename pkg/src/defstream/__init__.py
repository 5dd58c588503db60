"""defstream: a continual adversarial-training laboratory.

Trains a small classifier through a staged schedule of attack families,
keeps a bounded replay buffer selected by augmentation-vote uncertainty,
and regularizes each stage against the previous stage's frozen model with
a temperature-scaled Jensen-Shannon consistency term.
"""

from .backend import BACKEND_NAME

__version__ = "0.1.0"

__all__ = ["BACKEND_NAME", "__version__"]
