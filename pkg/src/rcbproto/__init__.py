"""Few-shot speaker identification with a grouped recurrent-convolutional prototypical network."""

__version__ = "0.1.0"
