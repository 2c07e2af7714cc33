"""Flat-torus eigenspaces, Morse audits of eigenfunctions, and a discrete Laplace-Beltrami operator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .bfield import SurfaceMetric
from .trig import TrigPolynomial

NEWTON_TOL = 1e-12
NEWTON_MAXIT = 50
_SEED_DEPTH = 6
# Every converged root is certified to lie in its own seed box, so merging only
# has to absorb floating-point duplicates.
DEDUP_RADIUS = 1e-7
_MIN_BOX = 1e-12
_MAX_BOXES = 200_000


class EmptyEigenspaceError(ValueError):
    def __init__(self, mu: int):
        self.mu = mu
        super().__init__(f"empty eigenspace: {mu} is not a sum of two squares")


class NewtonNonConvergence(RuntimeError):
    def __init__(self, cells: list[tuple[int, int]]):
        self.cells = cells
        super().__init__(f"Newton non-convergence from {len(cells)} seed cell(s): {cells[:8]}")


@dataclass(frozen=True)
class EigenspaceBasis:
    mu: int
    modes: tuple[tuple[int, int], ...]

    @property
    def dim(self) -> int:
        return 2 * len(self.modes)

    @property
    def basis(self) -> list[TrigPolynomial]:
        out = []
        for k1, k2 in self.modes:
            out.append(TrigPolynomial.cos(k1, k2))
            out.append(TrigPolynomial.sin(k1, k2))
        return out

    def combine(self, coeffs: Sequence[float]) -> TrigPolynomial:
        """``sum_i coeffs[i] * basis[i]`` with basis order cos(k), sin(k) per mode."""
        if len(coeffs) != self.dim:
            raise ValueError(f"expected {self.dim} coefficients, got {len(coeffs)}")
        terms = {}
        for i, (k1, k2) in enumerate(self.modes):
            terms[(k1, k2, "cos")] = float(coeffs[2 * i])
            terms[(k1, k2, "sin")] = float(coeffs[2 * i + 1])
        return TrigPolynomial(terms)

    def to_json(self) -> dict[str, Any]:
        return {"mu": self.mu, "dim": self.dim, "modes": [list(m) for m in self.modes]}


def enumerate_eigenspace(mu: int) -> EigenspaceBasis:
    """Lattice representatives of ``|k|^2 = mu``, one per +-k pair."""
    if int(mu) != mu or mu < 1:
        raise ValueError("mu must be a positive integer")
    mu = int(mu)
    r = math.isqrt(mu) + 1
    modes = [
        (k1, k2)
        for k1 in range(0, r + 1)
        for k2 in range(-r, r + 1)
        if k1 * k1 + k2 * k2 == mu and (k1 > 0 or k2 > 0)
    ]
    if not modes:
        raise EmptyEigenspaceError(mu)
    return EigenspaceBasis(mu, tuple(sorted(modes)))


def sample_eigenfunction(basis: EigenspaceBasis, seed: int) -> TrigPolynomial:
    """Gaussian random element of the eigenspace, scaled to unit sup-norm estimate."""
    rng = np.random.default_rng(seed)
    f = basis.combine(rng.standard_normal(basis.dim))
    return f / f.sup_estimate(64)


@dataclass(frozen=True)
class CriticalPoint:
    x: float
    y: float
    value: float
    hess_det: float
    index: str  # "min" | "saddle" | "max" | "degenerate"

    def to_json(self) -> list[Any]:
        return [self.x, self.y, self.value, self.hess_det, self.index]


@dataclass(frozen=True)
class MorseAudit:
    critical_points: list[CriticalPoint]
    is_morse: bool
    zero_set_regular: bool
    min_abs_critical_value: float
    min_abs_hess_det: float
    tol: float
    grid_n: int
    scale: float = 1.0
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def euler_characteristic(self) -> int:
        c = self.counts
        return c.get("min", 0) - c.get("saddle", 0) + c.get("max", 0)

    @property
    def generic(self) -> bool:
        return self.is_morse and self.zero_set_regular

    def to_json(self) -> dict[str, Any]:
        return {
            "critical_points": [cp.to_json() for cp in self.critical_points],
            "critical_point_fields": ["x", "y", "value", "hess_det", "index"],
            "is_morse": self.is_morse,
            "zero_set_regular": self.zero_set_regular,
            "min_abs_critical_value": self.min_abs_critical_value,
            "min_abs_hess_det": self.min_abs_hess_det,
            "counts": dict(self.counts),
            "tol": self.tol,
            "gridN": self.grid_n,
            "scale": self.scale,
        }


def _wrap(d: np.ndarray) -> np.ndarray:
    return (d + np.pi) % (2 * np.pi) - np.pi


def _newton(f: TrigPolynomial, pts: np.ndarray, gtol: float) -> tuple[np.ndarray, np.ndarray]:
    """Damped Newton on grad f = 0 for a batch of points; returns (points, converged)."""
    jet = f.jet
    p = pts.copy()
    _, g, H = jet(p[:, 0], p[:, 1])
    gn = np.linalg.norm(g, axis=1)
    done = gn <= gtol
    for _ in range(NEWTON_MAXIT):
        act = ~done
        if not act.any():
            break
        step = -np.einsum("nij,nj->ni", np.linalg.pinv(H[act], rcond=1e-12), g[act])
        cand = p[act].copy()
        t = np.ones(act.sum())
        for _ in range(12):
            trial = cand + t[:, None] * step
            _, gt, _ = jet(trial[:, 0], trial[:, 1])
            bad = np.linalg.norm(gt, axis=1) > gn[act] * (1 - 1e-4 * t)
            bad &= np.linalg.norm(gt, axis=1) > gtol
            if not bad.any():
                break
            t[bad] *= 0.5
        p[act] = cand + t[:, None] * step
        _, g, H = jet(p[:, 0], p[:, 1])
        gn = np.linalg.norm(g, axis=1)
        done = gn <= gtol
    # one polishing step for converged points
    step = -np.einsum("nij,nj->ni", np.linalg.pinv(H, rcond=1e-12), g)
    polished = p + step
    _, gp, _ = jet(polished[:, 0], polished[:, 1])
    better = np.linalg.norm(gp, axis=1) < gn
    p[better] = polished[better]
    return np.mod(p, 2 * np.pi), done


def _exclusion_bounds(f: TrigPolynomial) -> np.ndarray:
    """Half the sup of the third directional derivatives of (f_x, f_y) per unit box radius."""
    mx = my = 0.0
    for (k1, k2, _), a in f.terms.items():
        l1 = (abs(k1) + abs(k2)) ** 2
        mx += abs(a) * abs(k1) * l1
        my += abs(a) * abs(k2) * l1
    return 0.5 * np.array([mx, my])


def _prune_boxes(f: TrigPolynomial, centres: np.ndarray, r: float, rem_scale: np.ndarray) -> np.ndarray:
    """Drop boxes (half-width ``r``) in which grad f provably has no zero.

    Uses a second-order Taylor expansion of the gradient about the centre with
    a certified remainder.  A box is dropped when one gradient component is
    bounded away from zero, or when every solution of the perturbed linear
    system lies outside the box.
    """
    if centres.size == 0:
        return centres
    _, g, H = f.jet(centres[:, 0], centres[:, 1])
    rem = rem_scale * r * r
    keep = ~np.any(np.abs(g) > np.abs(H).sum(axis=2) * r + rem, axis=1)
    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
    safe = np.abs(det) > 1e-300
    d = np.where(safe, det, 1.0)
    inv = np.empty_like(H)
    inv[:, 0, 0] = H[:, 1, 1] / d
    inv[:, 1, 1] = H[:, 0, 0] / d
    inv[:, 0, 1] = inv[:, 1, 0] = -H[:, 0, 1] / d
    d0 = -np.einsum("nij,nj->ni", inv, g)
    spread = np.abs(inv) @ rem
    keep &= ~(np.any(np.abs(d0) - spread > r, axis=1) & safe)
    return centres[keep]


def _split(centres: np.ndarray, r: float) -> np.ndarray:
    q = r / 2
    off = np.array([[-q, -q], [-q, q], [q, -q], [q, q]])
    return (centres[:, None, :] + off[None]).reshape(-1, 2)


def _merge(roots: np.ndarray, radius: float) -> list[np.ndarray]:
    """Greedy merge of points closer than ``radius`` on the flat torus."""
    if len(roots) == 0:
        return []
    tree = cKDTree(roots, boxsize=2 * np.pi)
    taken = np.zeros(len(roots), bool)
    kept = []
    for i in range(len(roots)):
        if taken[i]:
            continue
        kept.append(roots[i])
        taken[tree.query_ball_point(roots[i], radius)] = True
    return kept


def morse_audit(f: TrigPolynomial, n: int = 64, tol: float = 1e-8) -> MorseAudit:
    """Locate and classify all critical points of ``f`` on the torus.

    Every grid cell is subdivided until a Taylor bound with certified remainder
    rules out a gradient zero; Newton is run from the boxes that survive.  The
    search is therefore exhaustive up to floating point.  Roots closer than
    ``DEDUP_RADIUS`` are merged.  ``tol`` is relative: Hessian determinants are
    compared against ``tol * scale^2`` and values against ``tol * scale`` with
    ``scale`` the grid sup-norm of ``f``.
    """
    if n < 32:
        raise ValueError("gridN must be >= 32")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if f.is_constant():
        return MorseAudit([], False, False, 0.0, 0.0, tol, n, 0.0, {})
    scale = f.sup_estimate(n)
    h = 2 * np.pi / n
    gtol = NEWTON_TOL * max(1.0, scale)
    rem_scale = _exclusion_bounds(f)
    ij = np.stack(np.meshgrid(np.arange(n), np.arange(n), indexing="ij"), -1).reshape(-1, 2)
    boxes, r = (ij + 0.5) * h, h / 2
    # Refine to a modest depth before handing survivors to Newton.
    for _ in range(_SEED_DEPTH):
        boxes = _prune_boxes(f, boxes, r, rem_scale)
        if boxes.size == 0:
            break
        boxes, r = _split(boxes, r), r / 2
    boxes = _prune_boxes(f, boxes, r, rem_scale)
    found = []
    while boxes.size:
        pts, ok = _newton(f, boxes, gtol)
        # A root only discharges the box it was seeded from.
        ok &= np.all(np.abs(_wrap(pts - boxes)) <= 2 * r, axis=1)
        found.append(pts[ok])
        boxes = boxes[~ok]
        if boxes.size == 0:
            break
        if r < _MIN_BOX or len(boxes) > _MAX_BOXES:
            cells = sorted({tuple(int(v) for v in c) for c in np.floor(boxes / h) % n})
            raise NewtonNonConvergence(cells)
        boxes, r = _split(boxes, r), r / 2
        boxes = _prune_boxes(f, boxes, r, rem_scale)
    roots = np.concatenate(found) % (2 * np.pi) if found else np.empty((0, 2))
    roots[roots >= 2 * np.pi] = 0.0

    kept = _merge(roots, DEDUP_RADIUS)
    kept.sort(key=lambda q: (round(q[0], 9), round(q[1], 9)))

    cps: list[CriticalPoint] = []
    counts = {"min": 0, "saddle": 0, "max": 0, "degenerate": 0}
    det_floor = tol * scale * scale
    if kept:
        P = np.array(kept)
        vals, _, H = f.jet(P[:, 0], P[:, 1])
        dets = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
        for (x, y), v, d, h in zip(P, vals, dets, H):
            if abs(d) <= det_floor:
                idx = "degenerate"
            elif d < 0:
                idx = "saddle"
            else:
                idx = "min" if h[0, 0] + h[1, 1] > 0 else "max"
            counts[idx] += 1
            cps.append(CriticalPoint(float(x), float(y), float(v), float(d), idx))
    min_det = min((abs(c.hess_det) for c in cps), default=0.0)
    min_val = min((abs(c.value) for c in cps), default=0.0)
    is_morse = bool(cps) and min_det > det_floor
    regular = bool(cps) and min_val > tol * scale
    return MorseAudit(cps, is_morse, regular, min_val, min_det, tol, n, scale, counts)


# -- discrete Laplace-Beltrami -------------------------------------------------


@dataclass(frozen=True)
class DiscreteLaplaceBeltrami:
    """Flux-form second-order discretisation of the metric Laplacian.

    ``matrix = W^-1 S`` with ``W = diag(sqrt(det h))`` at the nodes and ``S``
    symmetric, so the operator is self-adjoint for the ``sqrt(det h)``-weighted
    inner product and annihilates constants exactly.
    """

    n: int
    matrix: sp.csr_matrix
    stiffness: sp.csr_matrix
    weights: np.ndarray

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, float)
        return (self.matrix @ u.reshape(-1)).reshape(u.shape)

    @property
    def nodes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = 2 * np.pi * np.arange(self.n) / self.n
        return np.meshgrid(xs, xs, indexing="ij")


def discrete_laplace_beltrami(h: SurfaceMetric, n: int) -> DiscreteLaplaceBeltrami:
    """Assemble the periodic operator for

    ``Lap_h u = (1/r) [d_x((h22 d_x u - h12 d_y u) / r) + d_y((h11 d_y u - h12 d_x u) / r)]``,
    ``r = sqrt(det h)``.  Diagonal fluxes use face-centred coefficients, the
    mixed fluxes use centred differences with nodal coefficients.
    """
    if n < 16:
        raise ValueError("gridN must be >= 16")
    h.validate(n)
    d = 2 * np.pi / n
    xs = np.arange(n) * d
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    r_node = h.sqrt_det(X, Y)

    def coef(poly: TrigPolynomial, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return poly(x, y) / h.sqrt_det(x, y)

    A_face = coef(h.h22, X + d / 2, Y).ravel()  # at (i+1/2, j)
    C_face = coef(h.h11, X, Y + d / 2).ravel()  # at (i, j+1/2)
    B_node = (-h.h12(X, Y) / r_node).ravel()

    I = sp.identity(n, format="csr")
    fwd = (sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n)).tolil())
    fwd[n - 1, 0] = 1.0
    fwd = fwd.tocsr() / d
    cen = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [1, -1], shape=(n, n)).tolil()
    cen[n - 1, 0] = 1.0
    cen[0, n - 1] = -1.0
    cen = cen.tocsr() / (2 * d)

    Fx, Fy = sp.kron(fwd, I), sp.kron(I, fwd)
    Cx, Cy = sp.kron(cen, I), sp.kron(I, cen)
    S = (
        -(Fx.T @ sp.diags(A_face) @ Fx)
        - (Fy.T @ sp.diags(C_face) @ Fy)
        + Cx @ sp.diags(B_node) @ Cy
        + Cy @ sp.diags(B_node) @ Cx
    )
    S = S.tocsr()
    w = r_node.ravel()
    L = (sp.diags(1.0 / w) @ S).tocsr()
    return DiscreteLaplaceBeltrami(n, L, S, w)


def _sample(u: TrigPolynomial | Callable[[np.ndarray, np.ndarray], np.ndarray], X, Y) -> np.ndarray:
    return np.asarray(u(X, Y), float)


def eigen_residual_check(
    Xz: TrigPolynomial | Callable[[np.ndarray, np.ndarray], np.ndarray],
    h: SurfaceMetric,
    lam: float,
    n: int,
) -> float:
    """``max |L_h Xz + lam^2 Xz|`` on the grid for the discrete operator ``L_h``."""
    op = discrete_laplace_beltrami(h, n)
    X, Y = op.nodes
    u = _sample(Xz, X, Y)
    return float(np.max(np.abs(op.apply(u) + lam * lam * u)))


def trig_eigen_residual(Xz: TrigPolynomial, lam: float, n: int = 32) -> float:
    """Flat-metric eigen-residual computed on the exact trig representation."""
    res = Xz.laplacian() + Xz * (lam * lam)
    return 0.0 if res.is_zero() else float(np.max(np.abs(res.on_grid(n))))


# -- manufactured eigenpairs for non-flat metrics -------------------------------


@dataclass(frozen=True)
class Eigenpair:
    """A metric together with an exact eigenfunction of its Laplacian."""

    name: str
    metric: SurfaceMetric
    lam: float
    Xz: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]

    def components(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(Xx, Xy, Xz)`` on Z of the b-Beltrami field with this exceptional data."""
        gx, gy = self.grad(x, y)
        rho = self.metric.sqrt_det(x, y)
        return gy / (self.lam * rho), -gx / (self.lam * rho), self.Xz(x, y)


def conformal_eigenpair(c: float = 0.3) -> Eigenpair:
    """Curved conformal metric ``rho(y) (dx^2 + dy^2)`` with eigenfunction ``sin x exp(c cos y)``.

    ``rho = 1 + c cos y - c^2 sin^2 y`` makes ``Lap_h u = -u``; ``rho`` must stay
    positive, which holds for ``|c| < 0.6``.
    """
    if not abs(c) < 0.6:
        raise ValueError("|c| must be < 0.6 for a positive conformal factor")
    rho = TrigPolynomial({(0, 0, "cos"): 1 - c * c / 2, (0, 1, "cos"): c, (0, 2, "cos"): c * c / 2})
    metric = SurfaceMetric(rho, rho)

    def u(x, y):
        return np.sin(x) * np.exp(c * np.cos(y))

    def grad(x, y):
        e = np.exp(c * np.cos(y))
        return np.cos(x) * e, -c * np.sin(y) * np.sin(x) * e

    return Eigenpair(f"conformal(c={c})", metric, 1.0, u, grad)


def sheared_eigenpair(f: TrigPolynomial, lam: float, a: float = 0.3, b: float = 0.2) -> Eigenpair:
    """Pull back the flat eigenfunction ``f`` by ``(x, y) -> (x + a sin y, y + b sin x)``.

    The pulled-back metric has trig-polynomial coefficients and
    ``sqrt(det h) = 1 - a b cos x cos y``; requires ``|a b| < 1``.
    """
    if not abs(a * b) < 1:
        raise ValueError("need |a b| < 1")
    h11 = TrigPolynomial({(0, 0, "cos"): 1 + b * b / 2, (2, 0, "cos"): b * b / 2})
    h22 = TrigPolynomial({(0, 0, "cos"): 1 + a * a / 2, (0, 2, "cos"): a * a / 2})
    h12 = TrigPolynomial({(0, 1, "cos"): a, (1, 0, "cos"): b})
    metric = SurfaceMetric(h11, h22, h12)
    fx, fy = f.dx(), f.dy()

    def u(x, y):
        return f(x + a * np.sin(y), y + b * np.sin(x))

    def grad(x, y):
        U, V = x + a * np.sin(y), y + b * np.sin(x)
        gu, gv = fx(U, V), fy(U, V)
        return gu + gv * b * np.cos(x), gu * a * np.cos(y) + gv

    return Eigenpair(f"sheared(a={a},b={b})", metric, float(lam), u, grad)
