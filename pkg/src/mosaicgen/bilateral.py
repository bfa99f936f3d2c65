"""Edge-aware mask refinement via a bilateral-grid solver.

The coarse mask is treated as a noisy target and solved against a
smoothness term expressed in a bilateral grid built from the reference
image in YUV space: vertices live on a five-dimensional (x, y, Y, U, V)
lattice, pixels splat bilinearly over the two spatial dimensions and
nearest-neighbour over the colour dimensions. The data term is weighted by
a per-pixel confidence map supplied by the caller; the smoothness term is
normalized by the mean vertex mass so the default smoothness weight keeps
the data term in charge on edge-free images. The normal equations are
solved with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import MosaicError

_DIMS = 5


class SolverDiverged(MosaicError):
    """CG residual failed to decrease within the iteration budget."""


@dataclass(frozen=True)
class BilateralParams:
    spatial_sigma: float = 16.0
    luma_sigma: float = 8.0
    chroma_sigma: float = 8.0
    smoothness: float = 128.0
    iterations: int = 25
    confidence_floor: float = 0.1

    def __post_init__(self):
        for name in ("spatial_sigma", "luma_sigma", "chroma_sigma",
                     "smoothness", "iterations", "confidence_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def rgb_to_yuv(image: np.ndarray) -> np.ndarray:
    """BT.601 full-range YUV, channels in [0, 255]."""
    rgb = image.astype(np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    v = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    return np.stack([y, u, v], axis=-1)


class BilateralGrid:
    """Splat/blur/slice machinery over the occupied lattice cells."""

    def __init__(self, image: np.ndarray, params: BilateralParams):
        h, w = image.shape[:2]
        self.n_pixels = h * w
        yuv = rgb_to_yuv(image)
        ys, xs = np.mgrid[0:h, 0:w]
        sx = xs.ravel() / params.spatial_sigma
        sy = ys.ravel() / params.spatial_sigma
        color = np.stack([
            np.rint(yuv[..., 0].ravel() / params.luma_sigma),
            np.rint(yuv[..., 1].ravel() / params.chroma_sigma),
            np.rint(yuv[..., 2].ravel() / params.chroma_sigma),
        ], axis=1).astype(np.int64)

        # bilinear corners over (x, y), nearest bin over colour
        fx, fy = np.floor(sx).astype(np.int64), np.floor(sy).astype(np.int64)
        ax, ay = sx - fx, sy - fy
        corner_coords = []
        corner_weights = []
        for dx, wx in ((0, 1.0 - ax), (1, ax)):
            for dy, wy in ((0, 1.0 - ay), (1, ay)):
                coords = np.column_stack([fx + dx, fy + dy, color])
                corner_coords.append(coords)
                corner_weights.append(wx * wy)
        all_coords = np.concatenate(corner_coords, axis=0)
        all_weights = np.concatenate(corner_weights, axis=0)
        all_pixels = np.tile(np.arange(self.n_pixels), 4)

        keep = all_weights > 1e-12
        all_coords, all_weights, all_pixels = (
            all_coords[keep], all_weights[keep], all_pixels[keep])
        all_coords -= all_coords.min(axis=0, keepdims=True)

        vertices, entry_to_vertex = np.unique(all_coords, axis=0, return_inverse=True)
        self.n_vertices = len(vertices)
        self._splat = sp.csr_matrix(
            (all_weights, (entry_to_vertex, all_pixels)),
            shape=(self.n_vertices, self.n_pixels),
        )

        # encode vertex coordinates as scalar keys to find +1 neighbours per dim
        extents = vertices.max(axis=0) + 2
        strides = np.ones(_DIMS, dtype=np.int64)
        for d in range(_DIMS - 2, -1, -1):
            strides[d] = strides[d + 1] * extents[d + 1]
        keys = vertices @ strides
        order = np.argsort(keys)
        sorted_keys = keys[order]

        blur = sp.identity(self.n_vertices, format="csr") * (2.0 * _DIMS)
        for d in range(_DIMS):
            probe = keys + strides[d]
            pos = np.searchsorted(sorted_keys, probe)
            pos = np.clip(pos, 0, self.n_vertices - 1)
            found = sorted_keys[pos] == probe
            src = np.flatnonzero(found)
            dst = order[pos[found]]
            if len(src):
                edges = sp.csr_matrix(
                    (np.ones(len(src)), (src, dst)),
                    shape=(self.n_vertices, self.n_vertices),
                )
                blur = blur + edges + edges.T
        self._blur = blur.tocsr()

    def splat(self, pixel_values: np.ndarray) -> np.ndarray:
        return self._splat @ pixel_values.ravel()

    def blur(self, vertex_values: np.ndarray) -> np.ndarray:
        return self._blur @ vertex_values

    def slice(self, vertex_values: np.ndarray) -> np.ndarray:
        return self._splat.T @ vertex_values

    def bistochastize(self, n_iter: int = 20) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal weights making the blurred splat weights near-bistochastic."""
        m = self.splat(np.ones(self.n_pixels))
        n = np.ones(self.n_vertices)
        for _ in range(n_iter):
            denom = np.maximum(self.blur(n), 1e-12)
            n = np.sqrt(n * m / denom)
        m = n * self.blur(n)  # exact Laplacian row sums whatever n_iter was
        return n, m


def solve(image: np.ndarray, target: np.ndarray, confidence: np.ndarray,
          params: BilateralParams) -> np.ndarray:
    """Solve for the smoothed target; returns per-pixel values clipped to [0, 1]."""
    h, w = target.shape
    grid = BilateralGrid(image, params)
    n, m = grid.bistochastize()
    # per-mean-mass normalization keeps the default smoothness weight from
    # flattening masks on images with no edges to snap to
    lam = params.smoothness / (2.0 * max(float(m.mean()), 1e-12))

    c_splat = grid.splat(confidence)
    b = grid.splat(confidence * target)

    def apply_a(y: np.ndarray) -> np.ndarray:
        return lam * (m * y - n * grid.blur(n * y)) + c_splat * y

    diag = np.maximum(lam * (m - 2.0 * _DIMS * n * n) + c_splat, 1e-5)
    y = b / np.maximum(c_splat, 1e-10)

    r = b - apply_a(y)
    initial_residual = float(np.linalg.norm(r))
    tol = max(1e-10 * max(float(np.linalg.norm(b)), 1.0), 1e-30)
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    final_residual = initial_residual
    for _ in range(params.iterations):
        if final_residual <= tol:
            break
        ap = apply_a(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            break
        alpha = rz / denom
        y = y + alpha * p
        r = r - alpha * ap
        final_residual = float(np.linalg.norm(r))
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    if final_residual > initial_residual * (1.0 + 1e-9) and initial_residual > tol:
        raise SolverDiverged(
            f"residual grew from {initial_residual:.3e} to {final_residual:.3e} "
            f"after {params.iterations} iterations")

    out = grid.slice(y).reshape(h, w)
    return np.clip(out, 0.0, 1.0)
