"""signkit: multilingual sign-language dataset curation and co-training toolkit."""

__version__ = "0.1.0"
