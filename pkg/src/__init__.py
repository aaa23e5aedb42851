"""
MDC weakly-supervised segmentation

Multi-dilated class activation maps, pseudo-mask synthesis and FCN training
for weakly and semi-supervised semantic segmentation, on a numpy autograd.
"""

__version__ = "1.0.0"
