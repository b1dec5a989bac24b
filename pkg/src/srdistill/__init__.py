"""Semantic-relation-preserving knowledge distillation for image translation GANs."""

__version__ = "0.1.0"
