"""Monte Carlo laboratory for reinforced random walks and their environments."""

__version__ = "0.1.0"
