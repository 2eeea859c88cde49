"""Method/dataset entity recognition for scientific text, plus long-term
co-occurrence trend mining over the extracted entities."""

__version__ = "0.1.0"
