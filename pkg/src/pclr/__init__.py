"""Patient-contrastive pre-training of 12-lead ECG encoders, in plain numpy."""

__version__ = "0.1.0"
