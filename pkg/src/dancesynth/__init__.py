"""Music-conditioned dance motion synthesis.

Library layout:

- ``autodiff``   reverse-mode AD over float64 numpy arrays
- ``optim``      Adam optimizer
- ``solvers``    pentadiagonal trend solver, PSD matrix-sqrt trace
- ``posedata``   pose sequences, jitter filtering, resampling, quantization,
                 dataset segmentation
- ``audiofeat``  MFCC + delta features and per-frame beat flags
- ``model``      two-stream motion transformer and training loop
- ``sampler``    autoregressive generation with incremental KV caching
- ``metrics``    plausibility, beat consistency, FID, and diversity scores
- ``cli``        the ``dancesynth`` command-line front end
"""

__version__ = "0.1.0"
