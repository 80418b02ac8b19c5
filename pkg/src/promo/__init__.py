"""Script-planned text-to-motion generation library.

The pipeline has three stages: an LLM (or offline stub) plans a sequence of
posture scripts from a free-text prompt, a script-conditioned diffusion model
generates candidate poses that a Viterbi pass narrows to one key pose per
frame, and a keypose-conditioned diffusion model produces the final motion
with global translation and rotation.
"""

__version__ = "0.1.0"

from promo.errors import PromoError

__all__ = ["PromoError", "__version__"]
