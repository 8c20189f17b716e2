"""Action embeddings learned through a transition model, with SAC policies
acting in embedding space and policy transfer across action and state spaces."""

__version__ = "0.1.0"
