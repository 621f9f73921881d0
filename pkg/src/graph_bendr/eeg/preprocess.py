from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from scipy.signal import firwin, upfirdn

from .types import EegWindow, Montage, Recording, ValidationError

# Older 10/20 names and their 10/10 equivalents.
SYNONYMS = {"t3": "t7", "t4": "t8", "t5": "p7", "t6": "p8"}
SYNONYMS.update({v: k for k, v in list(SYNONYMS.items())})

MAX_POLYPHASE_FACTOR = 1000


def _rate_ratio(source: float, target: float) -> Fraction | None:
    ratio = Fraction(target).limit_denominator(10**6) / Fraction(source).limit_denominator(10**6)
    if ratio.numerator > MAX_POLYPHASE_FACTOR or ratio.denominator > MAX_POLYPHASE_FACTOR:
        return None
    return ratio


def _polyphase_filter(up: int, down: int, half_taps: int = 10) -> tuple[np.ndarray, int]:
    max_rate = max(up, down)
    half_len = half_taps * max_rate
    h = firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    # unit DC gain on every polyphase branch keeps constants exact
    for p in range(up):
        h[p::up] /= h[p::up].sum()
    return h, half_len


def _resample_poly(x: np.ndarray, up: int, down: int, n_out: int) -> np.ndarray:
    h, half_len = _polyphase_filter(up, down)
    npad = half_len // up + 2
    xpad = np.pad(x, ((0, 0), (npad, npad)), mode="edge")
    delay = npad * up + half_len
    extra = (-delay) % down
    h = np.concatenate([np.zeros(extra), h])
    q0 = (delay + extra) // down
    y = upfirdn(h, xpad, up, down, axis=1)
    return y[:, q0 : q0 + n_out]


def resample(recording: Recording, target_sfreq: float) -> Recording:
    """Rational polyphase resampling; falls back to linear interpolation for awkward ratios."""
    if not target_sfreq > 0:
        raise ValidationError("target_sfreq must be positive")
    x = np.asarray(recording.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValidationError("recording contains non-finite samples")
    if target_sfreq == recording.sfreq:
        return recording
    T = recording.n_samples
    ratio = _rate_ratio(recording.sfreq, target_sfreq)
    exact_len = Fraction(T) * (Fraction(target_sfreq) / Fraction(recording.sfreq))
    n_out = int(math.floor(exact_len + Fraction(1, 2)))
    if ratio is not None:
        y = _resample_poly(x, ratio.numerator, ratio.denominator, n_out)
    else:
        t_in = np.arange(T) / recording.sfreq
        t_out = np.arange(n_out) / target_sfreq
        y = np.stack([np.interp(t_out, t_in, row) for row in x])
    return Recording(recording.channel_labels, float(target_sfreq), y, recording.subject_id)


def _match_key(label: str) -> str:
    return label.strip().lower()


def select_channels(recording: Recording, montage: Montage) -> Recording:
    """Keep exactly the montage channels, in montage order."""
    lookup = {}
    for i, label in enumerate(recording.channel_labels):
        lookup.setdefault(_match_key(label), i)
    rows, missing = [], []
    for label in montage.labels:
        key = _match_key(label)
        idx = lookup.get(key, lookup.get(SYNONYMS.get(key, ""), None))
        if idx is None:
            missing.append(label)
        else:
            rows.append(idx)
    if missing:
        raise ValidationError(f"recording is missing montage channels: {', '.join(missing)}")
    if rows == list(range(recording.n_channels)) and tuple(montage.labels) == recording.channel_labels:
        return recording
    return Recording(tuple(montage.labels), recording.sfreq, recording.samples[rows], recording.subject_id)


def zscore(recording: Recording, eps: float = 1e-12) -> Recording:
    x = np.asarray(recording.samples, dtype=np.float64)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    return Recording(recording.channel_labels, recording.sfreq, (x - mu) / np.maximum(sd, eps), recording.subject_id)


def window(recording: Recording, length_s: float, label: int | None = None) -> list[EegWindow]:
    """Non-overlapping windows of floor(length_s * sfreq) samples; the remainder is dropped."""
    L = int(math.floor(length_s * recording.sfreq))
    if L < 1:
        raise ValidationError("window length must cover at least one sample")
    count = recording.n_samples // L
    return [
        EegWindow(
            recording.samples[:, k * L : (k + 1) * L],
            recording.sfreq,
            label,
            (recording.subject_id, k * L),
        )
        for k in range(count)
    ]
