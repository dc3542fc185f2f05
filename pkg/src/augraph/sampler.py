"""Differentiable crop-and-resize via affine grids and bilinear lookup.

``make_grid`` maps an output lattice through an axis-aligned affine
transform; ``bilinear_sample`` interpolates a feature map at the resulting
normalized points. Grids and feature maps are plain tensors: a grid has
shape ``(..., H_o, W_o, 2)`` with the last axis holding ``(u, v)`` in
normalized coordinates, a feature map is ``(C, H, W)`` or ``(N, C, H, W)``.

Conventions (fixed, and load-bearing for the tests):

* align-corners lattice: with n > 1 output columns, column j sits at
  ``u = -1 + 2j/(n-1)``, so the endpoints land exactly at +-1; a
  single-column output sits at 0;
* a normalized u maps to the continuous pixel index ``x = (u+1)/2*(W-1)``;
* out-of-range indices clamp to the edge, which keeps interpolation a
  convex combination of real pixels and leaves gradients defined at the
  border.

Everything is built from elementary tensor ops, so derivatives with
respect to the feature values and the transform parameters come from
autograd and are exercised against finite differences by
:mod:`augraph.gradcheck`.
"""

from __future__ import annotations

import torch

from augraph.errors import DataError


def _lattice(n: int, dtype: torch.dtype) -> torch.Tensor:
    if n < 1:
        raise DataError(f"output size must be positive, got {n}")
    if n == 1:
        return torch.zeros(1, dtype=dtype)
    return torch.linspace(-1.0, 1.0, n, dtype=dtype)


def make_grid(theta: torch.Tensor, out_size: tuple[int, int]) -> torch.Tensor:
    """Sampling grid for the transform ``theta = (s_x, s_y, t_x, t_y)``.

    theta may carry leading batch dimensions; the result has shape
    ``theta.shape[:-1] + (H_o, W_o, 2)`` where cell (i, j) holds
    ``(s_x*u_j + t_x, s_y*v_i + t_y)`` for the align-corners output
    lattice ``(u_j, v_i)``.
    """
    theta = torch.as_tensor(theta)
    if theta.shape[-1] != 4:
        raise DataError(f"theta must end in 4 entries, got shape {tuple(theta.shape)}")
    h, w = int(out_size[0]), int(out_size[1])
    xs = _lattice(w, theta.dtype)
    ys = _lattice(h, theta.dtype)
    s_x, s_y, t_x, t_y = theta.unbind(-1)
    u = s_x[..., None, None] * xs + t_x[..., None, None]
    v = s_y[..., None, None] * ys[:, None] + t_y[..., None, None]
    u, v = torch.broadcast_tensors(u, v)
    return torch.stack([u, v], dim=-1)


def bilinear_sample(feature: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Bilinearly interpolate ``feature`` at the grid's normalized points.

    Accepts ``(C, H, W)`` with a ``(H_o, W_o, 2)`` grid or ``(N, C, H, W)``
    with ``(N, H_o, W_o, 2)``; returns ``(C, H_o, W_o)`` or
    ``(N, C, H_o, W_o)``. Grid points outside the map clamp to the edge.
    The result is linear in ``feature``.
    """
    unbatched = feature.dim() == 3
    if unbatched:
        if grid.dim() != 3:
            raise DataError("unbatched feature map needs an unbatched grid")
        feature = feature[None]
        grid = grid[None]
    if feature.dim() != 4 or grid.dim() != 4 or grid.shape[-1] != 2:
        raise DataError(
            f"expected (N, C, H, W) features with (N, H_o, W_o, 2) grid, got "
            f"{tuple(feature.shape)} and {tuple(grid.shape)}"
        )
    if feature.shape[0] != grid.shape[0]:
        raise DataError(
            f"batch mismatch: {feature.shape[0]} feature maps, {grid.shape[0]} grids"
        )
    n, c, h, w = feature.shape
    h_o, w_o = grid.shape[1], grid.shape[2]
    grid = grid.to(feature.dtype)

    x = (grid[..., 0] + 1.0) * (w - 1) / 2.0
    y = (grid[..., 1] + 1.0) * (h - 1) / 2.0
    x = x.clamp(0.0, float(w - 1))
    y = y.clamp(0.0, float(h - 1))

    x0 = x.detach().floor().clamp(0.0, float(max(w - 2, 0)))
    y0 = y.detach().floor().clamp(0.0, float(max(h - 2, 0)))
    wx = x - x0
    wy = y - y0
    x0l = x0.long()
    y0l = y0.long()
    x1l = (x0l + 1).clamp(max=w - 1)
    y1l = (y0l + 1).clamp(max=h - 1)

    flat = feature.reshape(n, c, h * w)

    def gather(yi: torch.Tensor, xi: torch.Tensor) -> torch.Tensor:
        idx = (yi * w + xi).reshape(n, 1, h_o * w_o).expand(n, c, h_o * w_o)
        return flat.gather(2, idx).reshape(n, c, h_o, w_o)

    f00 = gather(y0l, x0l)
    f01 = gather(y0l, x1l)
    f10 = gather(y1l, x0l)
    f11 = gather(y1l, x1l)

    wx = wx[:, None]
    wy = wy[:, None]
    out = (
        f00 * (1.0 - wx) * (1.0 - wy)
        + f01 * wx * (1.0 - wy)
        + f10 * (1.0 - wx) * wy
        + f11 * wx * wy
    )
    return out[0] if unbatched else out


def crop_resize(
    feature: torch.Tensor, theta: torch.Tensor, out_size: tuple[int, int]
) -> torch.Tensor:
    """Convenience composition of :func:`make_grid` and :func:`bilinear_sample`."""
    return bilinear_sample(feature, make_grid(theta, out_size))
