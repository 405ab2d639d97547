"""
kg-linker: knowledge-base link prediction with a graph neural network
over the minimal subgraph connecting a source/target entity pair.
"""
__version__ = "0.3.0"
