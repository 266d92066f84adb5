"""Video-based postural tremor scoring toolkit.

Subpackages cover the full pipeline: synthetic assessment generation,
pose/clip preprocessing, spectral features with a random-forest baseline,
a 3D Conv-LSTM severity classifier on a small autodiff engine, evaluation
statistics, and embedding/outlier analysis.
"""

__version__ = "0.1.0"
