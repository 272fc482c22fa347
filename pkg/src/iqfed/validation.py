"""Input checks shared by the estimators and the harness."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .signal import FrameSet


def check_iq(X, min_length: int = 2) -> np.ndarray:
    """Coerce frames to a float (n, 2, T) array.

    Accepts a :class:`FrameSet`, a complex (n, T) array or a real (n, 2, T)
    array; rejects non-finite values and frames shorter than ``min_length``.
    """
    if isinstance(X, FrameSet):
        X = X.as_real()
    X = np.asarray(X)
    if np.iscomplexobj(X):
        if X.ndim != 2:
            raise ValueError(f"complex frames must be a (n, T) array, got shape {X.shape}")
        X = np.stack([X.real, X.imag], axis=1)
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim != 3 or X.shape[1] != 2:
        raise ValueError(f"real frames must be a (n, 2, T) array, got shape {X.shape}")
    if X.shape[2] < min_length:
        raise ValueError(f"frames have {X.shape[2]} samples; at least {min_length} are required")
    return X


def check_features(X) -> np.ndarray:
    return check_array(X, dtype=np.float64)


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.size != n:
        raise ValueError(f"{n} samples but {y.size} labels")
    return y
