"""Segmentation evaluation: DSC, relative volume difference, paired t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .volio import LabelVolume

__all__ = ["EvalResult", "dsc", "rvd", "evaluate", "paired_t_test"]


@dataclass(frozen=True)
class EvalResult:
    dsc: float
    rvd: float
    vol_seg: int
    vol_ref: int

    def as_dict(self) -> dict:
        return {"dsc": self.dsc, "rvd": self.rvd, "vol_seg": self.vol_seg, "vol_ref": self.vol_ref}


def dsc(a: LabelVolume, b: LabelVolume) -> float:
    """Dice similarity coefficient 2|A&B| / (|A| + |B|)."""
    if not a.same_geometry(b):
        raise ValueError("mask geometries must match")
    fa, fb = a.as_bool(), b.as_bool()
    denom = int(fa.sum()) + int(fb.sum())
    if denom == 0:
        raise ValueError("both masks are empty")
    return 2.0 * int(np.logical_and(fa, fb).sum()) / denom


def rvd(seg: LabelVolume, ref: LabelVolume) -> float:
    """Relative volume difference |V_seg - V_ref| / V_ref."""
    if not seg.same_geometry(ref):
        raise ValueError("mask geometries must match")
    v_ref = ref.foreground_count
    if v_ref == 0:
        raise ValueError("reference mask is empty")
    return abs(seg.foreground_count - v_ref) / v_ref


def evaluate(seg: LabelVolume, ref: LabelVolume) -> EvalResult:
    return EvalResult(
        dsc=dsc(seg, ref),
        rvd=rvd(seg, ref),
        vol_seg=seg.foreground_count,
        vol_ref=ref.foreground_count,
    )


def _betacf(a: float, b: float, x: float) -> float:
    # continued fraction for the incomplete beta (modified Lentz)
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def paired_t_test(x, y) -> tuple:
    """Two-sided paired t-test; returns (t, p).

    t = mean(d) / (sd(d)/sqrt(n)) with the n-1 sample standard deviation; the
    p-value comes from the Student-t CDF with n-1 degrees of freedom via the
    regularized incomplete beta.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1D sequences of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 pairs")
    d = x - y
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        raise ValueError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    df = n - 1
    p = _betainc(df / 2.0, 0.5, df / (df + t * t))
    return t, p
