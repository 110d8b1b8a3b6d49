"""Benchmark harness for joint VQA and multi-target segmentation on radiology images.

Assembles task manifests, parses free-form answers and scores prediction runs
with gated detection, diagnosis and segmentation metrics.
"""
__version__ = "0.1.0"
