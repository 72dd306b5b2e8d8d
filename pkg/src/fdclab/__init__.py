"""Sensor fault detection lab: flight simulation, SDI imagefication, CNN training,
Taylor pruning and Grad-CAM."""

__version__ = "0.1.0"
