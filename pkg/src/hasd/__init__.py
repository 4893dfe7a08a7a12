"""Human-aligned skill discovery on 2D navigation.

Skills are latent-conditioned policies trained on a blend of a
distance-maximising diversity reward and a preference-learned alignment
reward; the blend weight can itself condition the policy so one artifact
carries the whole diversity-alignment trade-off curve.
"""

__version__ = "0.1.0"
