"""Line spectral frequencies from linear-prediction polynomials."""

from __future__ import annotations

import numpy as np

from ..dsp import lpc_frames

LPC_ORDER = 20


def _deflate(poly: np.ndarray, root: float) -> np.ndarray:
    # synthetic division of each row by (1 - root z^-1); the remainder is zero
    # by construction for the symmetric/antisymmetric LSF polynomials
    n = poly.shape[1] - 1
    out = np.empty((poly.shape[0], n))
    acc = np.zeros(poly.shape[0])
    for i in range(n):
        acc = poly[:, i] + root * acc
        out[:, i] = acc
    return out


def _angles(poly: np.ndarray) -> np.ndarray:
    """Angles in (0, pi) of the roots of real palindromic polynomials."""
    m, n = poly.shape
    deg = n - 1
    comp = np.zeros((m, deg, deg))
    comp[:, 0, :] = -poly[:, 1:] / poly[:, :1]
    comp[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    roots = np.linalg.eigvals(comp)
    ang = np.sort(np.abs(np.angle(roots)), axis=1)
    # conjugate pairs: keep one of each
    return ang[:, ::2]


def lsf_from_lpc(a: np.ndarray) -> np.ndarray:
    """Map inverse-filter coefficients ``[1, a1, ..., ap]`` (p even) to LSFs.

    Accepts a single predictor or a matrix of predictors (one per row) and
    returns ``p`` ascending angles in radians for each.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    single = a.shape[0] == 1
    p = a.shape[1] - 1
    if p % 2:
        raise ValueError("LSF conversion implemented for even predictor order")
    ext = np.concatenate([a, np.zeros((a.shape[0], 1))], axis=1)
    rev = ext[:, ::-1]
    psum = ext + rev  # root at z = -1
    pdif = ext - rev  # root at z = +1
    wp = _angles(_deflate(psum, -1.0))
    wq = _angles(_deflate(pdif, 1.0))
    lsf = np.sort(np.concatenate([wp, wq], axis=1), axis=1)
    return lsf[0] if single else lsf


def lsf_features(windowed_frames: np.ndarray, order: int = LPC_ORDER):
    """LSFs of order-``order`` LPC for every frame.

    Returns ``(lsf, degenerate)``; degenerate frames get the LSFs of the
    trivial predictor and are flagged for removal.
    """
    a, degenerate = lpc_frames(windowed_frames, order)
    return lsf_from_lpc(a), degenerate
