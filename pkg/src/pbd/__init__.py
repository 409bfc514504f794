"""PBD: pseudo-bidirectional decoding for local sequence transduction.

Character-level transformer encoder-decoder whose decoder attends to copied
encoder states of the not-yet-generated positions.
"""

__version__ = "0.1.0"
