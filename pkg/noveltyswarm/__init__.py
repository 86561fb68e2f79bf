"""noveltyswarm: novelty search workbench for evolved robot swarm controllers"""

__version__ = "0.1.0"
