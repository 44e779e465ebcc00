"""Dynamic sample assignment driven by RBF-surrogate hyper-parameter search.

The package is organised bottom-up:

* :mod:`hpsdet.geometry`   boxes, IoU, candidate grids, level matching
* :mod:`hpsdet.losses`     focal / IoU losses and their gradients
* :mod:`hpsdet.hpspace`    the per-(level, aspect-ratio) hyper-parameter vector
* :mod:`hpsdet.assignment` dynamic top-k assignment and fixed baselines
* :mod:`hpsdet.surrogate`  cubic RBF surrogate, DYCORS / SRBF search loop
* :mod:`hpsdet.simdet`     synthetic scenes, toy detector, the search objective
* :mod:`hpsdet.metrics`    COCO mAP and MAP@0.5
* :mod:`hpsdet.cli`        ``hpsdet`` command line entry point
"""

__version__ = "0.1.0"


class InvalidInput(ValueError):
    """Raised when an argument violates an operation's precondition."""
