"""Active learning with MC-dropout acquisition and random architecture search
for binary image segmentation, on a pure-numpy encoder-decoder."""

__version__ = "0.1.0"
