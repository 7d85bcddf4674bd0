"""Detector networks with hand-written gradients."""
