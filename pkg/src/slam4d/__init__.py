"""Motion-aware camera localization and factorized 4D radiance fields.

Two halves share one geometry core: masked dense bundle adjustment that
solves keyframe poses and inverse depths from flow correspondences while
zeroing dynamic pixels, and a six-plane factorized space-time radiance
field trained by volumetric rendering. A synthetic scene generator provides
ground-truth images, depth, flow and motion masks for end-to-end checks.
"""

__version__ = "0.1.0"
