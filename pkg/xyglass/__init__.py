"""
Disordered XY-model glass dynamics at desk scale
"""

__version__ = "0.1.0.dev0"
