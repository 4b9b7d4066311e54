"""Handwritten digit OCR toolkit.

Page images go through noise filtering and edge detection, characters are
isolated with bounding boxes, and each glyph is classified by a single
hidden-layer network trained with Adam.
"""

__version__ = "0.1.0"
