"""Degree-based binary masks for the autoregressive flow layers.

Hidden unit u gets degree d_u cycling through 1..D-1. The encoder mask
admits input j (0-based) into a degree-d unit iff j <= d-1; the decoder
mask admits a degree-d unit into output i (0-based) iff d <= i. Any
input-to-output path therefore satisfies j <= d-1 <= i-1 < i, so the
connectivity product is strictly lower triangular: output i depends
only on inputs with index < i, and output 0 is bias-only.
"""

from __future__ import annotations

import numpy as np

from .errors import FlowadError


def build_masks(latent_size: int, hidden_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (m_enc, m_dec) with shapes (D, H) and (H, D), float64 0/1."""
    if latent_size < 1 or hidden_size < 1:
        raise FlowadError("mask sizes must be >= 1")
    D, H = latent_size, hidden_size
    if D == 1:
        # No admissible degrees: the single output is bias-only.
        m_enc = np.zeros((D, H))
        m_dec = np.zeros((H, D))
    else:
        degrees = (np.arange(H) % (D - 1)) + 1  # in 1..D-1
        j = np.arange(D)[:, None]
        m_enc = (j <= degrees[None, :] - 1).astype(np.float64)
        i = np.arange(D)[None, :]
        m_dec = (degrees[:, None] <= i).astype(np.float64)
    validate_masks(m_enc, m_dec)
    return m_enc, m_dec


def validate_masks(m_enc: np.ndarray, m_dec: np.ndarray):
    """Exhaustively verify strict triangularity of the connectivity product."""
    if m_enc.ndim != 2 or m_dec.ndim != 2 or m_enc.shape[1] != m_dec.shape[0]:
        raise FlowadError("mask shapes are not composable")
    if m_enc.shape[0] != m_dec.shape[1]:
        raise FlowadError("masks must map D inputs to D outputs")
    conn = m_enc @ m_dec  # conn[j, i] = paths from input j to output i
    D = conn.shape[0]
    for j in range(D):
        for i in range(D):
            if j >= i and conn[j, i] != 0:
                raise FlowadError(
                    f"mask connectivity violates strict triangularity at input {j}, output {i}"
                )
