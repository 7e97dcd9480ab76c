"""spikesal: spike-camera video saliency detection with spatiotemporal
debiasing and optimal-transport adversarial training, on plain numpy."""

__version__ = "0.1.0"
