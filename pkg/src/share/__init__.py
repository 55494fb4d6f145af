"""Camera-pose adversarial data augmentation: loss landscapes, RoME sampling, and the fine-tuning loop."""

__version__ = "0.1.0"
