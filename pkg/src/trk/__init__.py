"""Transfer-risk toolkit.

Estimates how well a model trained on a source task will transfer to a
target task, by measuring transport costs between the tasks' input and
output distributions and combining them into a single risk score.
"""

__version__ = "0.1.0"

from .distributions import (
    EmpiricalDistribution,
    Gaussian1D,
    GaussianJoint,
    GaussianND,
    gaussian_kl,
    gaussian_w2,
    sample,
)

__all__ = [
    "__version__",
    "EmpiricalDistribution",
    "Gaussian1D",
    "GaussianJoint",
    "GaussianND",
    "gaussian_kl",
    "gaussian_w2",
    "sample",
]
