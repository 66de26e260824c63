"""Affine rescaling of responses and predictors."""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, a):
        a = np.asarray(a, dtype=np.float64)
        std = a.std(axis=0)
        # constant columns keep unit scale
        std = np.where(std > 1e-12, std, 1.0)
        return cls(a.mean(axis=0), std)

    def transform(self, a):
        return (np.asarray(a, dtype=np.float64) - self.mean) / self.std

    def inverse(self, a):
        return np.asarray(a, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class UnitIntervalScaler:
    """Maps the training range of a scalar response onto [0, 1]."""

    y_min: float
    y_max: float

    @classmethod
    def fit(cls, y):
        y = np.asarray(y, dtype=np.float64).ravel()
        lo, hi = float(y.min()), float(y.max())
        if hi - lo < 1e-12:
            hi = lo + 1.0
        return cls(lo, hi)

    @property
    def span(self):
        return self.y_max - self.y_min

    def transform(self, y, clip=False):
        z = (np.asarray(y, dtype=np.float64) - self.y_min) / self.span
        return np.clip(z, 0.0, 1.0) if clip else z

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.span + self.y_min
