"""Explicit least-squares multi-step predictor built from Hankel blocks.

Eliminating ``g`` from the partitioned implicit predictor gives

    y_f = Y_f H_zᵀ (H_z H_zᵀ + eps I)⁻¹ z,   z = [u_p; u_f; y_p; (1)]

which is the minimum-norm combination of data columns reproducing the
conditioning vector ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .trajectory_data import HankelBlocks, numeric_rank


class SingularPredictorError(np.linalg.LinAlgError):
    pass


def default_ridge(H_z: np.ndarray, scale: float = 1e-9) -> float:
    """Ridge scaled by the mean diagonal of ``H_z H_zᵀ``."""
    rows = max(H_z.shape[0], 1)
    return scale * float(np.sum(H_z * H_z)) / rows


@dataclass(frozen=True)
class PredictorContext:
    """Data blocks plus the ridge used in the normal equations.

    ``regularization_eps=None`` picks :func:`default_ridge`; ``0.0`` demands
    a full-row-rank ``H_z``.
    """

    blocks: HankelBlocks
    affine: bool | None = None
    regularization_eps: float | None = None

    def __post_init__(self):
        if self.affine is None:
            object.__setattr__(self, "affine", self.blocks.affine)
        if self.regularization_eps is not None and self.regularization_eps < 0:
            raise ValueError("regularization_eps must be >= 0")

    def H_z(self) -> np.ndarray:
        b = self.blocks
        rows = [b.U_p, b.U_f, b.Y_p]
        if self.affine:
            rows.append(b.ones[None, :])
        return np.vstack(rows)

    def eps(self) -> float:
        if self.regularization_eps is None:
            return default_ridge(self.H_z())
        return self.regularization_eps


def assemble_z(u_p, y_p, u_f, affine: bool) -> np.ndarray:
    """Stack ``[u_p; u_f; y_p]`` and append 1 when ``affine``."""
    parts = [np.ravel(u_p), np.ravel(u_f), np.ravel(y_p)]
    if affine:
        parts.append(np.ones(1))
    return np.concatenate(parts).astype(float)


def predictor_gain(ctx: PredictorContext) -> np.ndarray:
    """The matrix ``K`` with ``y_f = K z``."""
    H_z = ctx.H_z()
    eps = ctx.eps()
    G = H_z @ H_z.T
    if eps > 0:
        G[np.diag_indices_from(G)] += eps
    try:
        c = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        if eps == 0 and numeric_rank(H_z) < H_z.shape[0]:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        r = numeric_rank(H_z)
        raise SingularPredictorError(
            f"H_z has rank {r} < {H_z.shape[0]} rows; use a positive ridge") from None
    # K = Y_f H_zᵀ G⁻¹  (G symmetric)
    return scipy.linalg.cho_solve(c, H_z @ ctx.blocks.Y_f.T, check_finite=False).T


def ls_predict(ctx: PredictorContext, u_p, y_p, u_f) -> np.ndarray:
    """Least-squares prediction of the future outputs, flattened time-major."""
    b = ctx.blocks
    z = assemble_z(u_p, y_p, u_f, ctx.affine)
    expected = b.U_p.shape[0] + b.U_f.shape[0] + b.Y_p.shape[0] + int(ctx.affine)
    if z.size != expected:
        raise ValueError(f"query has {z.size} entries, the blocks expect {expected}")
    return predictor_gain(ctx) @ z


def prediction_residual(y_hat, y_true) -> float:
    y_hat = np.ravel(y_hat)
    y_true = np.ravel(y_true)
    if y_hat.shape != y_true.shape:
        raise ValueError("prediction and ground truth lengths differ")
    return float(np.linalg.norm(y_hat - y_true))
