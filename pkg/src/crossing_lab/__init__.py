"""Virtual crosswalk experiment platform.

Deterministic single-lane traffic simulation, pedestrian crossing trials with
distraction conditions and a smart-LED crosswalk treatment, surrogate safety
analytics (PET / TTC / kinematics), and multinomial-logit safety estimation.
"""

__version__ = "0.1.0"
