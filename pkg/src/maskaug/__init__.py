"""Two-step masked-face augmentation: rule-based mask warping, then
attention-guided unpaired translation trained with a non-mask change penalty."""

__version__ = "0.1.0"
