"""Multi-person human parsing on synthetic scenes: affinity graphs, graph GAN, clustering, CRF and metrics."""

__version__ = "0.1.0"
