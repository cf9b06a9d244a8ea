"""Shift-invert eigensolvers for the assembled system, plus a dense oracle.

Eigenvalues relate to frequency through lambda = (2 pi f / c)^2.  Divergence
penalized (spurious) solutions carry lambda < 0, i.e. imaginary f; they are
filtered out of solve_modes results and only surface through
dense_solve_all, which returns the complete spectrum.

Decaying modes of open (impedance-walled) problems appear with Im f > 0 and
quality factor Re f / (2 Im f).
"""
from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla
from scipy.constants import c as C0

from .assembly import AssembledSystem

__all__ = ["EigenPair", "SolveError", "solve_modes", "dense_solve_all", "q_from_complex"]

log = logging.getLogger(__name__)

_SEED = 0x5EEDC0DE
_RITZ_TOL = 1e-10
_DENSE_CAP = 3000
# modes with lambda below this fraction of the shift are gradient/harmonic
# leftovers, not resonances
_PHYSICAL_FLOOR = 1e-8


class SolveError(RuntimeError):
    pass


@dataclass
class EigenPair:
    """One resonance: complex frequency plus full-space nodal amplitudes.

    h holds (H^r, H^phi, H^z) interleaved per node (index 3*node + comp),
    normalized to max nodal amplitude 1 with the largest entry real
    positive.  residual is ||K h - lambda M h|| / (||K||_inf ||h||) on the
    reduced system.
    """

    f_mode: complex
    h: np.ndarray
    residual: float
    M_azimuthal: int
    lam: complex

    @property
    def f_real(self) -> float:
        return float(np.real(self.f_mode))

    @property
    def is_physical(self) -> bool:
        return abs(np.real(self.f_mode)) > 1e3 * abs(np.imag(self.f_mode)) * 1e-12 and np.real(self.lam) > 0


def q_from_complex(f_mode: complex) -> float:
    """Quality factor Re[f]/(2 Im[f]) of a decaying mode."""
    if np.imag(f_mode) <= 0:
        raise ValueError("mode is not decaying (Im f <= 0); no Q defined")
    return float(np.real(f_mode) / (2.0 * np.imag(f_mode)))


def _f_from_lambda(lam: complex) -> complex:
    return cmath.sqrt(lam) * C0 / (2.0 * math.pi)


def _sigma(f_target: float) -> float:
    return (2.0 * math.pi * f_target / C0) ** 2


def _normalize(h: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(h)))
    pivot = h[idx]
    if pivot == 0:
        return h
    h = h / pivot
    if np.iscomplexobj(h) and np.max(np.abs(h.imag)) < 1e-12 * np.max(np.abs(h.real)):
        h = h.real.copy()
    return h


def _make_pair(sys: AssembledSystem, lam, vec_red, K, scale_k) -> EigenPair:
    r = K @ vec_red - lam * (sys.Mmat @ vec_red)
    residual = float(np.linalg.norm(r) / (scale_k * np.linalg.norm(vec_red)))
    h = sys.T @ vec_red
    return EigenPair(
        f_mode=_f_from_lambda(lam),
        h=_normalize(h),
        residual=residual,
        M_azimuthal=sys.M_azimuthal,
        lam=complex(lam),
    )


def _filter_physical(lams, sigma):
    floor = _PHYSICAL_FLOOR * max(abs(sigma), 1.0)
    return np.real(lams) > floor


def solve_modes(
    sys: AssembledSystem,
    f_target: float,
    n_modes: int,
    include_spurious: bool = False,
    iterate_impedance: bool = True,
    ncv: int | None = None,
) -> list:
    """Modes nearest f_target, sorted by |f - f_target|.

    Closed lossless systems go through symmetric Lanczos; systems with an
    impedance wall use non-Hermitian shift-invert Arnoldi and, by default, a
    fixed-point update of the wall's reference frequency toward the mode
    nearest the target (at most 5 rounds, stopping at |df|/f < 1e-6).
    """
    if n_modes < 1:
        raise SolveError("n_modes must be >= 1")
    if f_target <= 0:
        raise SolveError("f_target must be positive")
    sigma = _sigma(f_target)
    n = sys.n_reduced
    k_req = min(n - 2, n_modes + max(4, n_modes // 2))
    if k_req < 1:
        raise SolveError("system too small for the requested mode count")
    if ncv is None:
        ncv = min(n, 4 * k_req + 20)
    rng = np.random.default_rng(_SEED)
    v0 = rng.standard_normal(n)

    if not sys.complex_flag:
        lams, vecs = _eigsh_retry(sys.K, sys.Mmat, k_req, sigma, v0, ncv)
        K = sys.K
    else:
        f_ref = f_target
        for it in range(5 if iterate_impedance else 1):
            K = sys.k_at(f_ref)
            lams, vecs = _eigs_retry(K, sys.Mmat, k_req, sigma, v0.astype(complex), ncv)
            fs = np.array([_f_from_lambda(l) for l in lams])
            near = int(np.argmin(np.abs(fs - f_target)))
            f_new = float(np.real(fs[near]))
            if f_new <= 0 or abs(f_new - f_ref) / f_new < 1e-6:
                break
            f_ref = f_new

    scale_k = spla.norm(sys.K, np.inf)
    pairs = []
    keep = _filter_physical(lams, sigma)
    for i in range(len(lams)):
        if include_spurious or keep[i]:
            pairs.append(_make_pair(sys, lams[i], vecs[:, i], K, scale_k))
    pairs.sort(key=lambda p: abs(p.f_mode - f_target))
    return pairs[:n_modes]


def _eigsh_retry(K, M, k, sigma, v0, ncv):
    last = None
    for bump in (0.0, 1e-6, 1e-4):
        try:
            lams, vecs = spla.eigsh(
                K,
                k=k,
                M=M,
                sigma=sigma * (1.0 + bump) + bump,
                which="LM",
                v0=v0,
                ncv=ncv,
                tol=_RITZ_TOL,
            )
            return lams, vecs
        except (RuntimeError, spla.ArpackError, spla.ArpackNoConvergence) as exc:  # singular shift, no convergence
            last = exc
            log.warning("eigsh failed at shift bump %g: %s", bump, exc)
    raise SolveError(f"shift-invert factorization/convergence failed: {last}")


def _eigs_retry(K, M, k, sigma, v0, ncv):
    last = None
    for bump in (0.0, 1e-6, 1e-4):
        try:
            lams, vecs = spla.eigs(
                K,
                k=k,
                M=M,
                sigma=sigma * (1.0 + bump) + bump,
                which="LM",
                v0=v0,
                ncv=ncv,
                tol=_RITZ_TOL,
            )
            return _dedup_conjugates(lams, vecs)
        except (RuntimeError, spla.ArpackError, spla.ArpackNoConvergence) as exc:
            last = exc
            log.warning("eigs failed at shift bump %g: %s", bump, exc)
    raise SolveError(f"complex shift-invert failed: {last}")


def _dedup_conjugates(lams, vecs):
    """Drop Im<0 member of any conjugate pair (physical decay has Im f > 0)."""
    keep = np.ones(len(lams), dtype=bool)
    for i in range(len(lams)):
        if not keep[i]:
            continue
        for j in range(i + 1, len(lams)):
            if keep[j] and abs(lams[j] - np.conj(lams[i])) < 1e-9 * abs(lams[i]):
                drop = i if np.imag(lams[i]) < np.imag(lams[j]) else j
                keep[drop] = False
    return lams[keep], vecs[:, keep]


def dense_solve_all(sys: AssembledSystem, f_ref: float | None = None) -> list:
    """Full spectrum by dense factorization; the shift-invert oracle.

    Unlike solve_modes this returns everything, including the negative-
    lambda (imaginary-frequency) penalty modes.  Capped at 3000 unknowns.
    """
    n = sys.n_reduced
    if n > _DENSE_CAP:
        raise SolveError(f"dense solve capped at {_DENSE_CAP} unknowns (got {n})")
    M = sys.Mmat.toarray()
    if not sys.complex_flag:
        K = sys.K.toarray()
        lams, vecs = sla.eigh(K, M)
        Ksp = sys.K
    else:
        Ksp = sys.k_at(f_ref)
        lams, vecs = sla.eig(Ksp.toarray(), M)
        order = np.argsort(np.real(lams))
        lams, vecs = lams[order], vecs[:, order]
    scale_k = spla.norm(sys.K, np.inf)
    return [_make_pair(sys, lams[i], vecs[:, i], Ksp, scale_k) for i in range(len(lams))]
