import numpy as np

from .. import NEUTRAL
from .types import N_CLASSES, ExpressionDistribution, FacialEncoding


def build_facial_encoding(dists):
    """One-hot of the class with the largest probability summed over faces.

    Ties go to the lowest class index; an image without faces is neutral.
    """
    if len(dists) == 0:
        return FacialEncoding.from_index(NEUTRAL)
    total = np.zeros(N_CLASSES)
    for d in dists:
        if not isinstance(d, ExpressionDistribution):
            d = ExpressionDistribution(d)
        total += d.probs
    # np.argmax returns the first maximal index
    return FacialEncoding.from_index(int(np.argmax(total)))
