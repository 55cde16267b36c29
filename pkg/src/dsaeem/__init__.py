"""Diamond stacked sparse autoencoder ensemble for small tabular classification."""

__version__ = "0.1.0"
