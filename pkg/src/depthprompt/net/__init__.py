"""Torch networks, losses and checkpoints."""
