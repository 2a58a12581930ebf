"""Facial-expression-aware attention captioning models and analysis tools."""

__version__ = "0.1.0"

EMOTIONS = ("happiness", "sadness", "fear", "surprise", "anger", "disgust", "neutral")
NEUTRAL = EMOTIONS.index("neutral")
