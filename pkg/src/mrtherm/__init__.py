"""MR temperature imaging engine.

Simulates multi-echo spoiled gradient-echo treatment sessions, reconstructs
undersampled dynamics with classical methods or a cascaded pair of small
U-Nets, estimates temperature (proton-resonance-frequency shift) and T1
change maps, and evaluates everything with standard image-quality metrics.
"""

from . import kspace, metrics, nn, phantom, pipeline, sim, thermometry

__version__ = "0.1.0"

__all__ = ["kspace", "metrics", "nn", "phantom", "pipeline", "sim",
           "thermometry", "__version__"]
