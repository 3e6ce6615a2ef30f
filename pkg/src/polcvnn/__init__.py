"""Complex-valued 3D-CNN classification of polarimetric SAR coherency images."""

__version__ = "0.1.0"
