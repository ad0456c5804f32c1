"""Phase emergence in two-mode and multimode condensates under particle detection.

Submodules:

``bloch``
    Sphere geometry, detector channels and setups.
``distribution``
    Phase distributions on the Bloch sphere and their update under detections.
``detstat``
    Exact detection statistics: partition probabilities and their maxima.
``trajectory``
    Seeded quantum-jump trajectories and ensembles.
``fock``
    Truncated Fock-space oracle used for verification.
``cli``
    Command-line front end (``phaselab``).
"""

__version__ = "0.1.0"
