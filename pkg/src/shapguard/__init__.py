"""shapguard: attribution-fingerprint detection of adversarial IoT flows.

Pipeline: train a feed-forward NIDS on flow features, craft white-box
adversarial examples (FGSM/PGD/DeepFool), compute DeepLIFT-rescale SHAP
fingerprints of clean and adversarial inputs, and flag adversarial traffic
with an autoencoder trained on clean fingerprints whose reconstruction
error exceeds a calibrated threshold.
"""

__version__ = "0.1.0"

from . import attacks, attribution, data, detector, evaluation, neural  # noqa: E402,F401
