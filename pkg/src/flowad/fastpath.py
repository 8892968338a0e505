"""Single-window scoring runtime for calibration, detection, and benchmarks.

Inference runs in 32-bit by default: parameters are cast once, flow
masks are folded into the MADE weights, and one fused kernel performs
normalize -> encode -> flow -> decode -> L1. The kernel is jitted with
numba when available (set FLOWAD_NO_NUMBA=1 to opt out); a pure-numpy
fallback implements the same computation. Whichever implementation is
selected at import time serves every call in the process, so streamed
and batch scoring of the same window are bit-identical.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .data import NormStats
from .errors import InputError
from .model import ModelConfig, build_flow_masks

_USE_NUMBA = os.environ.get("FLOWAD_NO_NUMBA", "") != "1"
if _USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _USE_NUMBA = False


def _forward_l1(x, w_x, w_h, b_g, mu_w, mu_b, lv_w, lv_b,
                enc_w, enc_b, dec_w, dec_b, alpha_e,
                d1_w, d1_b, d2_w, d2_b, eps):
    """L1 between the normalized window x (T, N) and its reconstruction."""
    T, n = x.shape
    H = b_g.shape[0] // 4
    h = np.zeros(H, dtype=x.dtype)
    c = np.zeros(H, dtype=x.dtype)
    for t in range(T):
        g = b_g + np.dot(x[t], w_x) + np.dot(h, w_h)
        for a in range(H):
            # Stable sigmoid: never exponentiate a positive argument.
            v = g[a]
            if v >= 0.0:
                i_g = 1.0 / (1.0 + math.exp(-v))
            else:
                ev = math.exp(v)
                i_g = ev / (1.0 + ev)
            v = g[H + a]
            if v >= 0.0:
                f_g = 1.0 / (1.0 + math.exp(-v))
            else:
                ev = math.exp(v)
                f_g = ev / (1.0 + ev)
            v = g[2 * H + a]
            if v >= 0.0:
                o_g = 1.0 / (1.0 + math.exp(-v))
            else:
                ev = math.exp(v)
                o_g = ev / (1.0 + ev)
            u_g = math.tanh(g[3 * H + a])
            c[a] = f_g * c[a] + i_g * u_g
            h[a] = o_g * math.tanh(c[a])
    z = mu_b + np.dot(h, mu_w)
    lv = lv_b + np.dot(h, lv_w)
    for d in range(z.shape[0]):
        if eps[d] != 0.0:
            z[d] = z[d] + math.exp(0.5 * lv[d]) * eps[d]
    for k in range(enc_w.shape[0]):
        hid = np.dot(z, enc_w[k]) + enc_b[k]
        for u in range(hid.shape[0]):
            if hid[u] < 0.0:
                hid[u] = 0.0
        mu_k = np.dot(hid, dec_w[k]) + dec_b[k]
        z = z * alpha_e + mu_k
    d1 = np.dot(z, d1_w) + d1_b
    for u in range(d1.shape[0]):
        if d1[u] < 0.0:
            d1[u] = 0.0
    flat = np.dot(d1, d2_w) + d2_b
    total = 0.0
    idx = 0
    for t in range(T):
        for j in range(n):
            total += abs(flat[idx] - x[t, j])
            idx += 1
    return total


if _USE_NUMBA:
    _forward_l1_jit = njit(cache=True, fastmath=False)(_forward_l1)
else:  # pragma: no cover - exercised only without numba
    _forward_l1_jit = _forward_l1


class ScoringRuntime:
    """Holds cast parameters and scores raw windows one at a time."""

    def __init__(self, config: ModelConfig, gen_arrays: dict, norm_stats: NormStats,
                 dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise InputError("scoring dtype must be float32 or float64")
        a = gen_arrays
        n, H, D = config.n_signals, config.hidden_size, config.latent_size
        dt = self.dtype
        cast = lambda arr: np.ascontiguousarray(arr, dtype=dt)
        self._w_x = cast(a["lstm_w"][:n])
        self._w_h = cast(a["lstm_w"][n:])
        self._b_g = cast(a["lstm_b"])
        self._mu_w = cast(a["mu_w"])
        self._mu_b = cast(a["mu_b"])
        self._lv_w = cast(a["logvar_w"])
        self._lv_b = cast(a["logvar_b"])
        K = config.flow_layers if config.use_flow else 0
        Hm = config.made_hidden
        self._enc_w = np.zeros((K, D, Hm), dtype=dt)
        self._enc_b = np.zeros((K, Hm), dtype=dt)
        self._dec_w = np.zeros((K, Hm, D), dtype=dt)
        self._dec_b = np.zeros((K, D), dtype=dt)
        if K > 0:
            m_enc, m_dec = build_flow_masks(config)
            for k in range(K):
                # Fold the masks into the weights once.
                self._enc_w[k] = cast(a[f"flow{k}_enc_w"] * m_enc)
                self._enc_b[k] = cast(a[f"flow{k}_enc_b"])
                self._dec_w[k] = cast(a[f"flow{k}_dec_w"] * m_dec)
                self._dec_b[k] = cast(a[f"flow{k}_dec_b"])
        self._alpha_e = dt.type(math.exp(config.alpha_const))
        self._d1_w = cast(a["dec1_w"])
        self._d1_b = cast(a["dec1_b"])
        self._d2_w = cast(a["dec2_w"])
        self._d2_b = cast(a["dec2_b"])
        self._mean = np.ascontiguousarray(norm_stats.mean, dtype=np.float64)
        self._std = np.ascontiguousarray(norm_stats.std, dtype=np.float64)
        self._zero_eps = np.zeros(D, dtype=dt)
        self.norm_stats = norm_stats

    @classmethod
    def from_checkpoint(cls, ckpt, dtype=np.float32) -> "ScoringRuntime":
        return cls(ckpt.config, ckpt.generator.arrays, ckpt.norm_stats, dtype=dtype)

    def normalize(self, window_raw: np.ndarray) -> np.ndarray:
        x = (np.asarray(window_raw, dtype=np.float64) - self._mean) / self._std
        return np.ascontiguousarray(x, dtype=self.dtype)

    def l1_error(self, window_raw: np.ndarray, eps=None) -> float:
        """Full inference on one raw (T_W, N) window: normalize,
        reconstruct, and return the L1 distance in normalized units."""
        x = np.asarray(window_raw)
        if x.shape != (self.config.window_len, self.config.n_signals):
            raise InputError(
                f"window shape {x.shape} does not match model "
                f"({self.config.window_len}, {self.config.n_signals})"
            )
        xn = self.normalize(x)
        e = self._zero_eps if eps is None else np.ascontiguousarray(eps, dtype=self.dtype)
        return float(
            _forward_l1_jit(
                xn, self._w_x, self._w_h, self._b_g,
                self._mu_w, self._mu_b, self._lv_w, self._lv_b,
                self._enc_w, self._enc_b, self._dec_w, self._dec_b,
                self._alpha_e, self._d1_w, self._d1_b, self._d2_w, self._d2_b, e,
            )
        )

    def warm_up(self):
        """Trigger JIT compilation outside any timed region."""
        dummy = np.zeros((self.config.window_len, self.config.n_signals))
        self.l1_error(dummy)
