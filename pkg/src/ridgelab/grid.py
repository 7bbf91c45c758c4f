"""Masked rectangular-grid fields and the grid.v1 file format.

Node (i, j) sits at origin + spacing * (i, j); axis 0 is x1 and axis 1 is
x2. Values carry an optional trailing component axis.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PreconditionError, ShapeError


@dataclass(frozen=True, eq=False)
class GridField:
    origin: tuple
    spacing: float
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not self.spacing > 0:
            raise ParameterError("grid spacing must be positive")
        vals = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if vals.shape[:2] != mask.shape:
            raise ShapeError(f"values {vals.shape} do not match mask {mask.shape}")
        if vals.ndim not in (2, 3):
            raise ShapeError("values must be (n1, n2) or (n1, n2, k)")
        if not np.all(np.isfinite(vals[mask])):
            raise PreconditionError("values must be finite on the mask")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def components(self) -> int:
        return 1 if self.values.ndim == 2 else self.values.shape[2]

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        n1, n2 = self.shape
        x = self.origin[0] + self.spacing * np.arange(n1)
        y = self.origin[1] + self.spacing * np.arange(n2)
        return np.meshgrid(x, y, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    def same_grid(self, other: "GridField") -> bool:
        return (
            self.shape == other.shape
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * (1 + self.spacing))
            and abs(self.spacing - other.spacing) <= 1e-12 * self.spacing
            and np.array_equal(self.mask, other.mask)
        )

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(self.origin, self.spacing, values, self.mask)

    def masked(self) -> np.ndarray:
        """Values with NaN outside the mask (the on-disk encoding)."""
        out = self.values.copy()
        out[~self.mask] = np.nan
        return out

    # grid.v1 ------------------------------------------------------------------

    def save(self, header_path: str, data_path: str | None = None) -> str:
        header_path = os.fspath(header_path)
        if data_path is None:
            data_path = os.path.splitext(header_path)[0] + ".bin"
        data = self.masked().astype("<f8")
        with open(data_path, "wb") as fh:
            fh.write(np.ascontiguousarray(data).tobytes(order="C"))
        header = {
            "format": "grid.v1",
            "origin": list(self.origin),
            "spacing": self.spacing,
            "shape": list(self.shape),
            "components": self.components,
            "data_file": os.path.relpath(data_path, os.path.dirname(os.path.abspath(header_path))),
        }
        with open(header_path, "w") as fh:
            json.dump(header, fh, indent=1)
        return header_path

    @classmethod
    def load(cls, header_path: str) -> "GridField":
        with open(header_path) as fh:
            header = json.load(fh)
        n1, n2 = header["shape"]
        k = int(header.get("components", 1))
        data_path = os.path.join(os.path.dirname(os.path.abspath(header_path)), header["data_file"])
        raw = np.fromfile(data_path, dtype="<f8")
        expected = n1 * n2 * k
        if raw.size != expected:
            raise ShapeError(f"{data_path}: expected {expected} values, found {raw.size}")
        vals = raw.reshape((n1, n2) if k == 1 else (n1, n2, k))
        mask = np.isfinite(vals) if k == 1 else np.all(np.isfinite(vals), axis=-1)
        vals = np.where(np.isnan(vals), 0.0, vals)
        return cls(tuple(header["origin"]), header["spacing"], vals, mask)


def box_grid(x0: float, y0: float, x1: float, y1: float, n: int) -> tuple[tuple, float, tuple]:
    """Origin, spacing and shape of an n-node-wide grid spanning a box (square cells)."""
    if n < 2:
        raise ParameterError("need at least 2 nodes per side")
    delta = max(x1 - x0, y1 - y0) / (n - 1)
    n1 = int(round((x1 - x0) / delta)) + 1
    n2 = int(round((y1 - y0) / delta)) + 1
    return (x0, y0), delta, (n1, n2)


def empty_field(origin, spacing, shape, mask=None, components: int = 1) -> GridField:
    vals = np.zeros(shape if components == 1 else (*shape, components))
    if mask is None:
        mask = np.ones(shape, dtype=bool)
    return GridField(origin, spacing, vals, mask)
