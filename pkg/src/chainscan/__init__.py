"""chainscan: static attack-chain scanner for serialized deep-learning models."""

__version__ = "0.1.0"
