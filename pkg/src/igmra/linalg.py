"""Dense linear-algebra kernel.

Thin SVDs, Brand's additive update of a thin SVD, streaming covariance
identities, principal angles between subspaces and empirical checkers for
the perturbation bounds that govern truncated incremental updates.

Matrices of observations are stored column-wise (``D x n``) throughout this
module, matching the usual linear-algebra convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

ORTHO_TOL = 1e-10
ORTHO_DRIFT = 1e-6
RESIDUAL_TOL = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a vector or a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _as_vector(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def fix_signs(u: np.ndarray, *others: np.ndarray) -> tuple[np.ndarray, ...]:
    """Flip columns so the largest-magnitude entry of each column of ``u`` is positive.

    The same flips are applied to every matrix in ``others`` so products such
    as ``u @ diag(s) @ v.T`` are unchanged.
    """
    if u.shape[1] == 0:
        return (u, *others)
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return (u * signs, *(o * signs for o in others))


def orthonormality_error(q: np.ndarray) -> float:
    """Frobenius norm of ``q.T q - I``."""
    return float(np.linalg.norm(q.T @ q - np.eye(q.shape[1])))


def reorthonormalize(q: np.ndarray) -> np.ndarray:
    """One stabilized Gram-Schmidt pass (Householder QR) keeping column orientation."""
    qq, r = np.linalg.qr(q)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return qq * d


@dataclass(frozen=True)
class ThinSvd:
    """Rank-``r`` factorization ``u @ diag(s) @ v.T``.

    For symmetric positive semi-definite use (covariances) ``v`` is the same
    array object as ``u``.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.s.shape[0])

    @property
    def symmetric(self) -> bool:
        return self.v is self.u

    def to_dense(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T

    def check(self, tol: float = ORTHO_TOL) -> None:
        """Raise ``ValueError`` if an invariant is violated."""
        if orthonormality_error(self.u) > tol or orthonormality_error(self.v) > tol:
            raise ValueError("singular vectors are not orthonormal")
        if np.any(self.s < 0) or np.any(np.diff(self.s) > tol * max(1.0, self.s[0] if self.rank else 1.0)):
            raise ValueError("singular values must be non-negative and non-increasing")

    @classmethod
    def zeros(cls, dim: int, rank: int) -> "ThinSvd":
        u = np.eye(dim, rank)
        return cls(u, np.zeros(rank), u)


def thin_svd(mat, rank: int, symmetric: bool = False) -> ThinSvd:
    """Top-``rank`` singular triplets of ``mat``.

    With ``symmetric=True`` the input is treated as symmetric positive
    semi-definite and factored through ``eigh`` so that ``v`` aliases ``u``.
    """
    a = _as_matrix(mat, "mat")
    p, q = a.shape
    if not 1 <= rank <= min(p, q):
        raise ValueError(f"rank must be in [1, {min(p, q)}], got {rank}")
    if symmetric:
        if p != q:
            raise ValueError("symmetric factorization needs a square matrix")
        w, vec = np.linalg.eigh(0.5 * (a + a.T))
        order = np.argsort(w)[::-1][:rank]
        s = np.clip(w[order], 0.0, None)
        (u,) = fix_signs(np.ascontiguousarray(vec[:, order]))
        return ThinSvd(u, s, u)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, v = fix_signs(np.ascontiguousarray(u[:, :rank]), np.ascontiguousarray(vt[:rank].T))
    return ThinSvd(u, s[:rank].copy(), v)


def _residual_basis(x: np.ndarray, basis: np.ndarray, tol: float):
    """Orthonormal basis for the part of ``x`` orthogonal to ``basis``.

    Directions whose residual norm is below ``tol`` are dropped, so the
    returned basis may have fewer columns than ``x`` (possibly none).
    Returns ``(coeffs, P, R)`` with ``x = basis @ coeffs + P @ R``.
    """
    coeffs = basis.T @ x
    resid = x - basis @ coeffs
    # second projection pass keeps the residual orthogonal to ``basis`` in floating point
    corr = basis.T @ resid
    resid -= basis @ corr
    coeffs += corr
    if resid.shape[1] == 0 or np.max(np.linalg.norm(resid, axis=0)) < tol:
        return coeffs, np.zeros((x.shape[0], 0)), np.zeros((0, x.shape[1]))
    pu, ps, pvt = np.linalg.svd(resid, full_matrices=False)
    keep = ps > tol
    p = pu[:, keep]
    return coeffs, p, p.T @ resid


def brand_update(svd: ThinSvd, a_cols, b_cols, rank: int | None = None) -> ThinSvd:
    """Thin SVD of ``svd.u @ diag(svd.s) @ svd.v.T + a_cols @ b_cols.T``.

    Brand's construction: the new left/right spaces are spanned by ``[U P]``
    and ``[V Q]``, where ``P``/``Q`` orthonormalize the parts of ``a_cols`` /
    ``b_cols`` outside ``U``/``V``; only the small core matrix ``K`` is
    diagonalized. The result is truncated back to ``rank`` (default: keep the
    input rank).
    """
    a = _as_matrix(a_cols, "a_cols")
    b = _as_matrix(b_cols, "b_cols")
    u, s, v = svd.u, svd.s, svd.v
    if a.shape[0] != u.shape[0] or b.shape[0] != v.shape[0]:
        raise ValueError("update rows must match the factor dimensions")
    if a.shape[1] != b.shape[1] or a.shape[1] < 1:
        raise ValueError("a_cols and b_cols need the same positive number of columns")
    rank = svd.rank if rank is None else rank
    r = svd.rank
    tol_a = RESIDUAL_TOL * max(1.0, float(np.max(np.abs(a))))
    tol_b = RESIDUAL_TOL * max(1.0, float(np.max(np.abs(b))))
    m_a, p, ra = _residual_basis(a, u, tol_a)
    m_b, q, rb = _residual_basis(b, v, tol_b)
    k = np.zeros((r + p.shape[1], r + q.shape[1]))
    k[:r, :r] = np.diag(s)
    k += np.vstack([m_a, ra]) @ np.vstack([m_b, rb]).T
    ku, ks, kvt = np.linalg.svd(k)
    keep = min(rank, ks.shape[0])
    new_u = np.hstack([u, p]) @ ku[:, :keep]
    new_v = np.hstack([v, q]) @ kvt[:keep].T
    new_s = ks[:keep]
    if keep < rank:
        # pad with orthonormal filler so the configured rank is preserved
        new_u = _pad_basis(new_u, rank)
        new_v = _pad_basis(new_v, rank)
        new_s = np.concatenate([new_s, np.zeros(rank - keep)])
    if orthonormality_error(new_u) > ORTHO_DRIFT:
        new_u = reorthonormalize(new_u)
    if orthonormality_error(new_v) > ORTHO_DRIFT:
        new_v = reorthonormalize(new_v)
    new_u, new_v = fix_signs(np.ascontiguousarray(new_u), np.ascontiguousarray(new_v))
    return ThinSvd(new_u, new_s, new_v)


def _pad_basis(q: np.ndarray, rank: int) -> np.ndarray:
    dim = q.shape[0]
    if q.shape[1] >= rank:
        return q
    extra = np.eye(dim)
    extra -= q @ (q.T @ extra)
    pu, ps, _ = np.linalg.svd(extra)
    return np.hstack([q, pu[:, : rank - q.shape[1]]])


def symmetric_update(svd: ThinSvd, cols, weight: float = 1.0, scale: float = 1.0,
                     rank: int | None = None) -> ThinSvd:
    """Brand update specialized to ``scale * U S U^T + weight * cols cols^T``.

    Left and right spaces coincide, so a single residual basis is formed and
    the symmetric core is diagonalized with ``eigh``.
    """
    c = _as_matrix(cols, "cols")
    u, s = svd.u, svd.s
    if c.shape[0] != u.shape[0]:
        raise ValueError("update rows must match the factor dimension")
    if weight < 0 or scale < 0:
        raise ValueError("weight and scale must be non-negative")
    rank = svd.rank if rank is None else rank
    r = svd.rank
    c = np.sqrt(weight) * c
    tol = RESIDUAL_TOL * max(1.0, float(np.max(np.abs(c))) if c.size else 1.0)
    m, p, rr = _residual_basis(c, u, tol)
    core = np.vstack([m, rr])
    k = core @ core.T
    k[:r, :r] += np.diag(scale * s)
    w, vec = np.linalg.eigh(0.5 * (k + k.T))
    order = np.argsort(w)[::-1][:rank]
    basis = np.hstack([u, p])
    new_u = basis @ vec[:, order]
    new_s = np.clip(w[order], 0.0, None)
    if new_u.shape[1] < rank:
        new_u = _pad_basis(new_u, rank)
        new_s = np.concatenate([new_s, np.zeros(rank - new_s.shape[0])])
    if orthonormality_error(new_u) > ORTHO_DRIFT:
        new_u = reorthonormalize(new_u)
    # a fixed memory layout keeps later BLAS calls, and thus results, reproducible
    (new_u,) = fix_signs(np.ascontiguousarray(new_u))
    return ThinSvd(new_u, new_s, new_u)


@dataclass(frozen=True)
class CovarianceUpdate:
    """``cov(X_new) = a * cov(X) + b * bmat @ bmat.T``."""

    a: float
    b: float
    bmat: np.ndarray
    n: int = 0
    m: int = 0

    def apply_dense(self, cov) -> np.ndarray:
        return self.a * np.asarray(cov, dtype=float) + self.b * (self.bmat @ self.bmat.T)

    @property
    def trace_increment(self) -> float:
        return self.b * float(np.sum(self.bmat ** 2))


def cov_rank1_terms(mean, n: int, point) -> CovarianceUpdate:
    """Rank-one covariance update for appending one observation.

    ``cov([X c]) = (n-1)/n cov(X) + 1/(n+1) (xbar - c)(xbar - c)^T``.
    """
    if n < 2:
        raise ValueError(f"sample covariance needs n >= 2, got {n}")
    xbar = _as_vector(mean, "mean")
    c = _as_vector(point, "point")
    if c.shape != xbar.shape:
        raise ValueError("point and mean dimensions differ")
    return CovarianceUpdate((n - 1) / n, 1.0 / (n + 1), (xbar - c)[:, None], n, 1)


def cov_rankm_terms(mean, n: int, new_points) -> CovarianceUpdate:
    """Rank-``m`` covariance update for appending the columns of ``new_points``."""
    if n < 2:
        raise ValueError(f"sample covariance needs n >= 2, got {n}")
    xbar = _as_vector(mean, "mean")
    c = _as_matrix(new_points, "new_points")
    if c.shape[0] != xbar.shape[0]:
        raise ValueError("new_points rows must match the mean dimension")
    m = c.shape[1]
    if m == 0:
        raise ValueError("need at least one new point")
    cbar = c.mean(axis=1)
    bmat = np.empty((xbar.shape[0], m + 1))
    bmat[:, :m] = c - cbar[:, None]
    bmat[:, m] = np.sqrt(n * m / (n + m)) * (xbar - cbar)
    return CovarianceUpdate((n - 1) / (n + m - 1), 1.0 / (n + m - 1), bmat, n, m)


def update_mean(mean, n: int, new_points) -> tuple[np.ndarray, int]:
    """Exact streaming mean after appending the columns of ``new_points``."""
    if n < 0:
        raise ValueError("count must be non-negative")
    c = _as_matrix(new_points, "new_points")
    m = c.shape[1]
    if m == 0:
        return _as_vector(mean, "mean").copy(), n
    if n == 0:
        return c.mean(axis=1), m
    xbar = _as_vector(mean, "mean")
    if c.shape[0] != xbar.shape[0]:
        raise ValueError("new_points rows must match the mean dimension")
    return (n * xbar + c.sum(axis=1)) / (n + m), n + m


def update_covariance_svd(svd: ThinSvd, update: CovarianceUpdate,
                          rank: int | None = None) -> ThinSvd:
    """Apply a covariance update to a symmetric thin SVD via Brand's method."""
    return symmetric_update(svd, update.bmat, weight=update.b, scale=update.a, rank=rank)


@dataclass(frozen=True)
class PrincipalAngles:
    cosines: np.ndarray
    angles: np.ndarray

    @property
    def max_angle(self) -> float:
        return float(self.angles[-1]) if self.angles.size else 0.0


def principal_angles(u1, u2, tol: float = 1e-8) -> PrincipalAngles:
    """Principal angles between ``span(u1)`` and ``span(u2)``.

    Both inputs must have orthonormal columns (within ``tol``). Cosines are
    the singular values of ``u2.T @ u1``; small angles are taken from the
    sines (singular values of the part of ``u1`` outside ``span(u2)``),
    which keeps them accurate below ``sqrt(eps)``.
    """
    a = _as_matrix(u1, "u1")
    b = _as_matrix(u2, "u2")
    if a.shape[0] != b.shape[0]:
        raise ValueError("subspaces live in different ambient dimensions")
    if orthonormality_error(a) > tol or orthonormality_error(b) > tol:
        raise ValueError("principal_angles needs orthonormal bases")
    if a.shape[1] > b.shape[1]:
        a, b = b, a
    k = a.shape[1]
    if k == 0:
        return PrincipalAngles(np.zeros(0), np.zeros(0))
    cos = np.clip(np.linalg.svd(b.T @ a, compute_uv=False), 0.0, 1.0)
    resid = a - b @ (b.T @ a)
    sin = np.clip(np.sort(np.linalg.svd(resid, compute_uv=False)), 0.0, 1.0)
    angles = np.where(cos**2 < 0.5, np.arccos(cos), np.arcsin(sin[:k]))
    return PrincipalAngles(cos, angles)


def projector_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    """Spectral norm of ``r1 r1^T - r2 r2^T``."""
    diff = r1 @ r1.T - r2 @ r2.T
    return float(np.linalg.norm(diff, 2))


# ---------------------------------------------------------------------------
# perturbation bound checkers
# ---------------------------------------------------------------------------


def _check_symmetric(cov) -> np.ndarray:
    c = _as_matrix(cov, "cov")
    if c.shape[0] != c.shape[1]:
        raise ValueError("cov must be square")
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(np.abs(c - c.T)) > 1e-10 * scale:
        raise ValueError("cov must be symmetric")
    return 0.5 * (c + c.T)


def _eig_desc(mat: np.ndarray):
    w, vec = np.linalg.eigh(mat)
    return w[::-1], vec[:, ::-1]


def _truncate(cov: np.ndarray, d: int):
    w, vec = _eig_desc(cov)
    lam = np.clip(w, 0.0, None)
    cd = (vec[:, :d] * lam[:d]) @ vec[:, :d].T
    return lam, cd


@dataclass(frozen=True)
class LemmaOneCheck:
    gaps: np.ndarray
    max_gap: float
    bound: float
    holds: bool


def lemma1_gap_bound(cov, d: int, update: CovarianceUpdate) -> LemmaOneCheck:
    """Singular-value gap between updating the full and the rank-``d`` covariance.

    Compares ``sigma_i(a C + b B B^T)`` with ``sigma_i(a C_d + b B B^T)`` and
    checks every gap against ``a sigma_{d+1}(C) + b sigma_1(B)^2``.
    """
    c = _check_symmetric(cov)
    dim = c.shape[0]
    if not 1 <= d <= dim:
        raise ValueError("d must be within [1, D]")
    lam, cd = _truncate(c, d)
    full = np.clip(_eig_desc(update.apply_dense(c))[0], 0.0, None)
    trunc = np.clip(_eig_desc(update.apply_dense(cd))[0], 0.0, None)
    gaps = np.abs(full - trunc)
    tail = lam[d] if d < dim else 0.0
    sb = np.linalg.norm(update.bmat, 2) if update.bmat.size else 0.0
    bound = update.a * tail + update.b * sb**2
    slack = 1e-12 * max(1.0, float(full[0]))
    return LemmaOneCheck(gaps, float(gaps.max()), float(bound), bool(np.all(gaps <= bound + slack)))


@dataclass(frozen=True)
class LemmaTwoCheck:
    """Outcome of the subspace-angle bound check.

    ``applicable`` uses the hypothesis exactly as stated (weighted tail
    against unweighted spectrum); ``applicable_weighted`` applies ``a``/``b``
    consistently on both sides. ``gap_bound`` is the Davis-Kahan style bound
    using the true eigengap of the truncated update, reported for reference.
    """

    observed: float
    bound: float
    applicable: bool
    holds: bool
    applicable_weighted: bool
    sin_theta_max: float
    gap_bound: float


def lemma2_angle_bound(cov, d: int, update: CovarianceUpdate, n: int) -> LemmaTwoCheck:
    """Distance between the top-``d`` eigenspaces of the full and truncated updates."""
    c = _check_symmetric(cov)
    dim = c.shape[0]
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 1 <= d < dim:
        raise ValueError("d must be within [1, D)")
    lam, cd = _truncate(c, d)
    sig_d, sig_tail = lam[d - 1], lam[d]
    sb2 = float(np.linalg.norm(update.bmat, 2) ** 2) if update.bmat.size else 0.0
    a, b = update.a, update.b
    applicable = a * sig_tail < (sig_d + sb2) / 4.0
    applicable_weighted = a * sig_tail < (a * sig_d + b * sb2) / 4.0
    denom = (n - 1) * sig_d + sb2
    bound = 2.0 * (n - 1) * sig_tail / denom if denom > 0 else np.inf
    w1, r1 = _eig_desc(update.apply_dense(c))
    w2, r2 = _eig_desc(update.apply_dense(cd))
    rd, rtd = r1[:, :d], r2[:, :d]
    observed = projector_distance(rtd, rd)
    sin_max = float(np.sin(principal_angles(rd, rtd).max_angle))
    eigengap = w2[d - 1] - w2[d]
    gap_bound = 2.0 * a * sig_tail / eigengap if eigengap > 0 else np.inf
    holds = observed <= bound + 1e-12
    return LemmaTwoCheck(float(observed), float(bound), bool(applicable), bool(holds),
                         bool(applicable_weighted), sin_max, float(gap_bound))


# ---------------------------------------------------------------------------
# randomized probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceProbe:
    """A covariance ``cov`` of ``n`` observations plus an update by ``m`` more."""

    cov: np.ndarray
    update: CovarianceUpdate
    n: int
    d: int
    data: np.ndarray = field(repr=False)
    new_points: np.ndarray = field(repr=False)


def random_covariance_probe(rng: np.random.Generator, dim: int, d: int, m: int,
                            n: int | None = None, tail_scale: float | None = None,
                            shift_scale: float | None = None) -> CovarianceProbe:
    """Draw data with a rank-``d`` dominant spectrum plus a noisy tail, then ``m`` new points.

    Tail level and the offset of the new batch are drawn log-uniformly unless
    given, so probes cover both well-separated and nearly flat spectra.
    """
    if n is None:
        n = int(rng.integers(max(dim + 2, 20), 201))
    if tail_scale is None:
        tail_scale = float(10 ** rng.uniform(-3, 0))
    if shift_scale is None:
        shift_scale = float(10 ** rng.uniform(-2, 1))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    spread = np.concatenate([rng.uniform(1.0, 10.0, d), tail_scale * rng.uniform(0.0, 1.0, dim - d)])
    basis = q * spread
    mu = rng.standard_normal(dim)
    data = mu[:, None] + basis @ rng.standard_normal((dim, n))
    shift = shift_scale * rng.standard_normal(dim)
    new = (mu + shift)[:, None] + basis @ rng.standard_normal((dim, m))
    cov = np.cov(data)
    upd = cov_rankm_terms(data.mean(axis=1), n, new)
    return CovarianceProbe(cov, upd, n, d, data, new)


@dataclass(frozen=True)
class ScalingProbe:
    """Observed top-``d`` spectrum discrepancy against its predicted scale."""

    observed: np.ndarray
    predictor: np.ndarray

    @property
    def spearman(self) -> float:
        return float(stats.spearmanr(self.observed, self.predictor).statistic)

    def rows(self):
        return list(zip(self.observed.tolist(), self.predictor.tolist()))


def top_spectrum_discrepancy(cov, d: int, update: CovarianceUpdate) -> float:
    """``||S_d - S~_d||_2`` between the full and truncated updates."""
    c = _check_symmetric(cov)
    _, cd = _truncate(c, d)
    s_full = _eig_desc(update.apply_dense(c))[0][:d]
    s_trunc = _eig_desc(update.apply_dense(cd))[0][:d]
    return float(np.max(np.abs(s_full - s_trunc)))


def prop1_scaling_probe(seeds: int, dims: tuple[int, int, int], seed: int = 0) -> ScalingProbe:
    """Scatter of ``||S_d - S~_d||_2`` against ``sigma_{d+1}(C) ||B||_F^4``.

    Each probe draws a covariance with a random tail level and an update
    batch with a random offset; the proposition is asymptotic, so the
    result is meant for a rank-correlation trend check, not a hard bound.
    """
    dim, d, m = dims
    if dim <= d:
        raise ValueError("need D > d")
    rng = np.random.default_rng(seed)
    obs = np.empty(seeds)
    pred = np.empty(seeds)
    for i in range(seeds):
        probe = random_covariance_probe(rng, dim, d, m)
        lam = np.clip(_eig_desc(probe.cov)[0], 0.0, None)
        obs[i] = top_spectrum_discrepancy(probe.cov, d, probe.update)
        pred[i] = lam[d] * np.linalg.norm(probe.update.bmat) ** 4
    return ScalingProbe(obs, pred)
