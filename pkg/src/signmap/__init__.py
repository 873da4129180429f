"""Traffic sign 3D positioning from monocular detections, GPS, and ego-motion or depth."""

__version__ = "0.1.0"
