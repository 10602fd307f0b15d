"""Bottom-up multi-person pose estimation machinery: training targets,
losses, adaptive convolution, heatmap-guided grouping and pose scoring."""

__version__ = "0.1.0"
