"""Word-based tagging vs span-based classification for flat NER, at desk scale."""

__version__ = "0.1.0"
