"""Sandwich covariance estimators for M-estimators.

With per-row estimating-function values ``phi_i`` and bread
``A = n^-1 sum d phi_i / d theta``, the covariance of the root is
``A^-1 B A^-T / n`` where ``B = n^-1 sum phi_i phi_i^T``. When a nuisance
parameter is estimated by its own estimating equation, ``phi_i`` is replaced
by ``phi_i - D M^-1 psi_i`` with ``D = n^-1 sum d phi_i / d eta``,
``M = n^-1 sum d psi_i / d eta`` and ``psi_i`` the nuisance score rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularBread, SingularNuisanceInformation
from .numeric import checked_inverse


@dataclass(frozen=True)
class SandwichParts:
    """Bread, meat and covariance of a sandwich estimator.

    ``rows`` holds the (possibly nuisance-corrected) estimating-function rows
    that produced the meat.
    """

    bread: np.ndarray
    meat: np.ndarray
    covariance: np.ndarray
    rows: np.ndarray

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def _assemble(rows, jacobian) -> SandwichParts:
    rows = np.asarray(rows, dtype=float)
    n = rows.shape[0]
    bread = np.atleast_2d(np.asarray(jacobian, dtype=float))
    a_inv = checked_inverse(bread, SingularBread, "bread matrix")
    meat = rows.T @ rows / n
    cov = a_inv @ meat @ a_inv.T / n
    cov = 0.5 * (cov + cov.T)
    return SandwichParts(bread=bread, meat=meat, covariance=cov, rows=rows)


def sandwich_plain(phi_rows, jacobian) -> SandwichParts:
    """Sandwich covariance with all nuisance quantities treated as known.

    Parameters
    ----------
    phi_rows : array_like
        (n, p) estimating-function values at the estimate.
    jacobian : array_like
        (p, p) mean derivative ``n^-1 sum d phi_i / d theta``.
    """
    return _assemble(phi_rows, jacobian)


def sandwich_nuisance_corrected(phi_rows, phi_aft_rows, d_phi_d_theta, d_phi_d_eta,
                                d_phi_aft_d_eta) -> SandwichParts:
    """Sandwich covariance accounting for an estimated nuisance parameter.

    Parameters
    ----------
    phi_rows : array_like
        (n, p) target estimating-function rows.
    phi_aft_rows : array_like
        (n, r) nuisance score rows.
    d_phi_d_theta : array_like
        (p, p) mean derivative of the target function in theta.
    d_phi_d_eta : array_like
        (p, r) mean derivative of the target function in the nuisance.
    d_phi_aft_d_eta : array_like
        (r, r) mean derivative of the nuisance score in the nuisance.
    """
    phi_rows = np.asarray(phi_rows, dtype=float)
    phi_aft_rows = np.asarray(phi_aft_rows, dtype=float)
    m_inv = checked_inverse(d_phi_aft_d_eta, SingularNuisanceInformation,
                            "nuisance information")
    correction = phi_aft_rows @ (np.asarray(d_phi_d_eta, dtype=float) @ m_inv).T
    return _assemble(phi_rows - correction, d_phi_d_theta)


def influence_rows(parts: SandwichParts, phi_rows=None) -> np.ndarray:
    """Influence-function rows ``-A^-1 phi_i`` (defaults to ``parts.rows``)."""
    rows = parts.rows if phi_rows is None else np.asarray(phi_rows, dtype=float)
    a_inv = checked_inverse(parts.bread, SingularBread, "bread matrix")
    return -rows @ a_inv.T
