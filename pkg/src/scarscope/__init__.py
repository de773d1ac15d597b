"""Information scrambling in Rydberg-blockaded scarred spin chains."""

__version__ = "0.1.0"
