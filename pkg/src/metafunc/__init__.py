"""Learning a regularizing transform in classifier-parameter space.

Few-shot-trained linear classifiers are mapped toward their many-shot
counterparts by a small residual regressor trained on paired functional
sets, then evaluated with an episodic N-way K-shot protocol on synthetic
embedding distributions.
"""

from . import classifiers, embeddings, episodes, evaluation, functional, neural
from .errors import MetafuncError

__all__ = [
    "classifiers",
    "embeddings",
    "episodes",
    "evaluation",
    "functional",
    "neural",
    "MetafuncError",
]

__version__ = "0.1.0"
