"""Rotation-invariant point cloud features from spherical voxel convolutions."""

__version__ = "0.1.0"
