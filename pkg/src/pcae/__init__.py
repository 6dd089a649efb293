"""Multi-scale self-attention auto-encoder for point clouds, in numpy.

Modules: ``geometry`` (sampling and grouping), ``diffcore`` (reverse-mode
autodiff), ``encoder``, ``decoder``, ``training``, ``evaluation`` and ``cli``.
"""

__version__ = "0.1.0"
