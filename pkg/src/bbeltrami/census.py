"""Equilibria on Z, their linearisation, and the escape / singular-periodic census.

At a critical point ``p`` of the exceptional Hamiltonian ``H`` the Jacobian of a
symmetric field in the coordinates ``(x, y, z)`` is::

    DX(p) = 1/(lam sqrt(det h)) * [[-H_xy, -H_yy, 0],
                                   [ H_xx,  H_xy, 0],
                                   [    0,     0, -lam sqrt(det h) H]]

so ``lam_z = -H(p)`` and ``det DX(p) = -Hess H(p) H(p) / (lam^2 det h(p))``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .bfield import Field, GlobalTorusField, SurfaceMetric, SymmetricBField, eval_field
from .dynamics import ClassifyOptions, Endpoint, OrbitVerdict, classify_orbit
from .spectral import MorseAudit, morse_audit

SCHEMA_VERSION = "1.0"
B1_PER_COMPONENT = 2
SEED_OFFSET = 1e-4
CIRCLE_SEEDS = 16
COUNTING_CONVENTION = (
    "escape orbits are counted as distinct (equilibrium, side of Z) pairs reached by at least one "
    "seeded trajectory; the seeds are one vertical orbit per side and 16 points on the 2-dim manifold "
    "circle, and every seed verdict is listed individually"
)


class NonMorseError(ValueError):
    """The audit does not certify a Morse Hamiltonian with regular zero set."""


class SPOVerificationError(RuntimeError):
    """A vertical orbit over a global extremum failed to verify as singular periodic."""


@dataclass(frozen=True)
class Seed:
    point: tuple[float, float, float]
    direction: str  # "forward", "backward" or "both"
    kind: str  # "vertical" or "circle"
    side: int

    def to_json(self) -> dict[str, Any]:
        return {"point": list(self.point), "direction": self.direction, "kind": self.kind, "side": self.side}


@dataclass
class EquilibriumRecord:
    x: float
    y: float
    z: float
    H: float
    morse_index: str
    hessian: np.ndarray
    lam: float
    sqrt_det_h: float
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    case_tag: int
    seeds: list[Seed] = field(default_factory=list)

    @property
    def lam_z(self) -> float:
        return float(self.jacobian[2, 2])

    @property
    def det_formula(self) -> float:
        """``-Hess H * H / (lam^2 det h)``, the determinant implied by the matrix above."""
        hess = float(np.linalg.det(self.hessian))
        return -hess * self.H / (self.lam**2 * self.sqrt_det_h**2)

    @property
    def det_formula_linear_lam(self) -> float:
        """``-Hess H * H / (lam det h)``; equals :attr:`det_formula` only when ``lam = 1``."""
        hess = float(np.linalg.det(self.hessian))
        return -hess * self.H / (self.lam * self.sqrt_det_h**2)

    @property
    def stable_dimension(self) -> int:
        """Eigenvalues with negative real part; centre pairs count as neutral."""
        tol = 1e-9 * max(1.0, float(np.max(np.abs(self.eigenvalues))))
        return int(np.sum(self.eigenvalues.real < -tol))

    def to_json(self) -> dict[str, Any]:
        ev = [[float(v.real), float(v.imag)] for v in self.eigenvalues]
        return {
            "location": [self.x, self.y, self.z],
            "H": self.H,
            "morseIndex": self.morse_index,
            "jacobian": self.jacobian.tolist(),
            "eigenvalues": ev,
            "lambdaZ": self.lam_z,
            "caseTag": self.case_tag,
            "seeds": [s.to_json() for s in self.seeds],
        }


def case_tag(morse_index: str, H: float) -> int:
    """1: saddle, H>0; 2: saddle, H<0; 3: extremum, H>0; 4: extremum, H<0."""
    if H == 0:
        raise ValueError("H vanishes at the equilibrium; the zero set is not regular")
    if morse_index == "saddle":
        return 1 if H > 0 else 2
    if morse_index in ("min", "max"):
        return 3 if H > 0 else 4
    raise ValueError(f"degenerate critical point ({morse_index})")


def exact_jacobian(H: TrigLike, x: float, y: float, lam: float, sqrt_det_h: float = 1.0) -> np.ndarray:
    """DX at ``(x, y, 0)`` from exact derivatives of ``H``."""
    v, _, hess = H.jet(x, y)
    hxx, hxy, hyy = hess[0, 0, 0], hess[0, 0, 1], hess[0, 1, 1]
    s = 1.0 / (lam * sqrt_det_h)
    return np.array([
        [-s * hxy, -s * hyy, 0.0],
        [s * hxx, s * hxy, 0.0],
        [0.0, 0.0, -float(v[0])],
    ])


TrigLike = Any


def fd_jacobian(fld: Field, point: Sequence[float], step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of the field in ``(x, y, z)``."""
    p = np.asarray(point, dtype=float)
    J = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        J[:, j] = (eval_field(fld, p + e) - eval_field(fld, p - e)) / (2 * step)
    return J


def _planar_eigvec(J: np.ndarray, stable: bool) -> np.ndarray:
    w, V = np.linalg.eig(J[:2, :2])
    i = int(np.argmin(w.real)) if stable else int(np.argmax(w.real))
    v = np.real(V[:, i])
    return v / np.linalg.norm(v)


def _project_to_level(H, q: np.ndarray, level: float) -> np.ndarray:
    """Newton steps along the gradient onto ``{H = level}``."""
    q = q.copy()
    for _ in range(8):
        v, g, _ = H.jet(q[0], q[1])
        g = g[0]
        r = float(v[0]) - level
        gg = float(g @ g)
        if gg == 0 or abs(r) < 1e-15:
            break
        q -= r * g / gg
    return q


def _vertical_z0(J: np.ndarray, z_floor: float, delta: float, kappa: float = 16.0) -> float:
    """Offset for a chart vertical seed.

    A numerical error in ``p`` grows like ``exp(sigma t)`` along a saddle's
    unstable direction while ``|z|`` shrinks like ``exp(-|lam_z| t)``; starting
    at most ``kappa |lam_z| / sigma`` e-folds above the floor keeps the planar
    drift far below the endpoint tolerance.
    """
    sigma = float(np.max(np.abs(np.linalg.eigvals(J[:2, :2]).real)))
    budget = math.log(delta / z_floor)
    if sigma > 0:
        budget = min(budget, max(kappa * abs(J[2, 2]) / sigma, _MIN_EFOLDS))
    return z_floor * math.exp(budget)


# Keeps every circle seed (|sin| >= sin(pi/16)) strictly above the floor.
_MIN_EFOLDS = 2.5


def classify_equilibria(
    fld: Field,
    audit: MorseAudit | None = None,
    metric: SurfaceMetric | None = None,
    delta: float = SEED_OFFSET,
    z_floor: float = 1e-8,
) -> list[EquilibriumRecord]:
    """Linearise the field at every critical point of ``H`` on each Z component."""
    audit = audit or morse_audit(fld.Xz)
    if not (audit.is_morse and audit.zero_set_regular):
        raise NonMorseError("audit is not Morse with regular zero set; equilibria are not hyperbolic")
    metric = metric or SurfaceMetric.flat()
    if isinstance(fld, GlobalTorusField):
        charts = [(0.0, fld.chart_at(0)), (math.pi, fld.chart_at(1))]
    else:
        charts = [(0.0, fld)]
    records = []
    for zc, chart in charts:
        H = chart.hamiltonian
        for cp in audit.critical_points:
            x, y = cp.x, cp.y
            rho = float(metric.sqrt_det(x, y))
            J = exact_jacobian(H, x, y, chart.lam, rho)
            val = float(H(x, y))
            _, _, hess = H.jet(x, y)
            idx = cp.index
            if idx in ("min", "max") and float(H(x, y)) != float(fld.Xz(x, y)):  # index refers to Xz
                idx = "max" if idx == "min" else "min"
            rec = EquilibriumRecord(
                x, y, zc, val, idx, hess[0], chart.lam, rho, J, np.linalg.eigvals(J), case_tag(idx, val)
            )
            rec.seeds = _seeds(fld, rec, delta, z_floor)
            records.append(rec)
    return records


def _seeds(fld: Field, rec: EquilibriumRecord, delta: float, z_floor: float) -> list[Seed]:
    stable = rec.H > 0
    way = "forward" if stable else "backward"
    out: list[Seed] = []
    z0 = _vertical_z0(rec.jacobian, z_floor, delta)
    if isinstance(fld, GlobalTorusField):
        # The vertical line over p is invariant; start it mid-interval so both
        # ends are reached after the same number of e-folds.
        out.append(Seed((rec.x, rec.y, math.pi / 2), "both", "vertical", 1))
        out.append(Seed((rec.x, rec.y, 3 * math.pi / 2), "both", "vertical", -1))
    else:
        out.append(Seed((rec.x, rec.y, z0), "both", "vertical", 1))
        out.append(Seed((rec.x, rec.y, -z0), "both", "vertical", -1))
    if rec.case_tag in (1, 2):
        v = _planar_eigvec(rec.jacobian, stable)
        H = fld.chart_at(0).hamiltonian if isinstance(fld, GlobalTorusField) else fld.hamiltonian
        level = float(H(rec.x, rec.y))
        for k in range(CIRCLE_SEEDS):
            th = (k + 0.5) * 2 * math.pi / CIRCLE_SEEDS
            q = _project_to_level(H, np.array([rec.x, rec.y]) + delta * math.cos(th) * v, level)
            # The manifold is (separatrix) x (z-axis), so any z-extent stays on
            # it; z0 bounds the time spent drifting along the planar unstable
            # direction, as for the vertical seeds.
            dz = z0 * math.sin(th)
            z = rec.z + dz
            if isinstance(fld, GlobalTorusField):
                z %= 2 * math.pi
                side = 1 if 0 < z < math.pi else -1
            else:
                side = 1 if dz > 0 else -1
            out.append(Seed((float(q[0]), float(q[1]), float(z)), way, "circle", side))
    return out


@dataclass
class SeedResult:
    seed: Seed
    equilibrium: int
    verdict: OrbitVerdict
    reruns: int = 0

    def to_json(self) -> dict[str, Any]:
        v = self.verdict
        return {
            "equilibrium": self.equilibrium,
            "seed": self.seed.to_json(),
            "kind": v.kind,
            "pMinus": None if v.p_minus is None else v.p_minus.to_json(),
            "pPlus": None if v.p_plus is None else v.p_plus.to_json(),
            "endpointDistances": v.endpoint_distances,
            "inconclusive": v.inconclusive,
            "unresolvedNearZ": v.unresolved_near_z,
            "reruns": self.reruns,
        }


@dataclass
class CensusReport:
    field: dict[str, Any]
    equilibria: list[EquilibriumRecord]
    results: list[SeedResult]
    escape_keys: list[tuple]
    spo_pairs: list[dict[str, Any]]
    components: int
    inconclusive: int
    options: ClassifyOptions

    @property
    def escape_orbits(self) -> list[SeedResult]:
        return [r for r in self.results if r.verdict.p_plus or r.verdict.p_minus]

    @property
    def n_escape(self) -> int:
        return len(self.escape_keys)

    @property
    def bound(self) -> int:
        return (2 + B1_PER_COMPONENT) * self.components

    @property
    def bound_satisfied(self) -> bool:
        return bool(self.spo_pairs) or self.n_escape >= self.bound

    def to_json(self) -> dict[str, Any]:
        o = self.options
        return {
            "schema_version": SCHEMA_VERSION,
            "field": self.field,
            "equilibria": [r.to_json() for r in self.equilibria],
            "escapeOrbits": [r.to_json() for r in self.escape_orbits],
            "seedVerdicts": [r.to_json() for r in self.results],
            "singularPeriodicPairs": self.spo_pairs,
            "counts": {
                "equilibria": len(self.equilibria),
                "seeds": len(self.results),
                "escapeOrbits": self.n_escape,
                "escapeVerdicts": len(self.escape_orbits),
                "singularPeriodic": len(self.spo_pairs),
                "inconclusive": self.inconclusive,
                "unresolvedNearZ": sum(1 for r in self.results if r.verdict.unresolved_near_z),
            },
            "bound": {
                "b1PerComponent": B1_PER_COMPONENT,
                "components": self.components,
                "requiredEscapes": self.bound,
                "satisfied": self.bound_satisfied,
            },
            "countingConvention": COUNTING_CONVENTION,
            "options": {
                "tMax": o.t_max, "rtol": o.rtol, "zFloor": o.z_floor,
                "endpointTol": o.endpoint_tol, "speedTol": o.speed_tol, "seedOffset": SEED_OFFSET,
            },
        }

    def escape_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["seed", "equilibrium", "kind", "x0", "y0", "z0", "end", "ex", "ey", "ez", "side", "distance"])
        for i, r in enumerate(self.results):
            v = r.verdict
            for end, p in (("omega", v.p_plus), ("alpha", v.p_minus)):
                if p is None:
                    continue
                w.writerow([i, r.equilibrium, v.kind, *(repr(c) for c in r.seed.point), end,
                            repr(p.x), repr(p.y), repr(p.z), p.side, repr(v.endpoint_distances[end])])
        return out.getvalue()


def _endpoint_id(p: Endpoint) -> tuple:
    return p.key() + (p.side,)


def escape_census(
    fld: Field,
    records: Sequence[EquilibriumRecord],
    opts: ClassifyOptions | None = None,
    rerun_factor: float = 10.0,
) -> CensusReport:
    """Classify the orbit of every manifold seed and evaluate the escape bound.

    Singular periodic orbits are only recognised when one trajectory locks at
    both ends; separately obtained escapes are never glued.  Inconclusive seeds
    are rerun once with a horizon ``rerun_factor`` times longer.
    """
    if not records:
        raise ValueError("no equilibria to seed from")
    opts = opts or ClassifyOptions()
    cps = tuple(sorted({(r.x, r.y) for r in records}))
    base = ClassifyOptions(**{**opts.__dict__, "critical_points": cps})
    results: list[SeedResult] = []
    seen: dict[tuple, OrbitVerdict] = {}
    for i, rec in enumerate(records):
        for seed in rec.seeds:
            key = (seed.point, seed.direction)
            dirs = ("backward", "forward") if seed.direction == "both" else (seed.direction,)
            o = ClassifyOptions(**{**base.__dict__, "directions": dirs, "recurrence": seed.direction == "both"})
            v = seen.get(key) or classify_orbit(fld, seed.point, o)
            reruns = 0
            if v.inconclusive and rerun_factor > 1:
                o = ClassifyOptions(**{**o.__dict__, "t_max": o.t_max * rerun_factor})
                v = classify_orbit(fld, seed.point, o)
                reruns = 1
            seen[key] = v
            results.append(SeedResult(seed, i, v, reruns))
    escape_keys: set[tuple] = set()
    spo: dict[tuple, dict[str, Any]] = {}
    for idx, r in enumerate(results):
        v = r.verdict
        for p in (v.p_plus, v.p_minus):
            if p is not None:
                escape_keys.add(_endpoint_id(p))
        if v.kind == "singularPeriodic":
            k = (_endpoint_id(v.p_minus), _endpoint_id(v.p_plus))
            if k not in spo:
                spo[k] = {"pMinus": v.p_minus.to_json(), "pPlus": v.p_plus.to_json(), "seedIndex": idx}
    components = 2 if isinstance(fld, GlobalTorusField) else 1
    inconclusive = sum(1 for r in results if r.verdict.inconclusive)
    return CensusReport(
        fld.to_json(), list(records), results, sorted(escape_keys), list(spo.values()),
        components, inconclusive, base,
    )


def globally_symmetric_spo(fld: GlobalTorusField, opts: ClassifyOptions | None = None) -> tuple[OrbitVerdict, OrbitVerdict]:
    """Verify the vertical orbits over the global minimum and maximum of ``H = -Xz``.

    Both are checked in ``0 < z < pi``.  Raises :class:`SPOVerificationError`
    if either fails to lock at both ends.
    """
    if fld.Xz.is_constant():
        raise ValueError("H is constant")
    audit = morse_audit(fld.Xz)
    H = -fld.Xz
    cps = audit.critical_points
    vals = [float(H(c.x, c.y)) for c in cps]
    lo, hi = int(np.argmin(vals)), int(np.argmax(vals))
    assert vals[lo] < 0 < vals[hi], "nonconstant eigenfunction must change sign"
    opts = opts or ClassifyOptions()
    opts = ClassifyOptions(**{**opts.__dict__, "critical_points": tuple((c.x, c.y) for c in cps)})
    out = []
    for i in (lo, hi):
        v = classify_orbit(fld, (cps[i].x, cps[i].y, math.pi / 2), opts)
        if v.kind != "singularPeriodic":
            raise SPOVerificationError(f"vertical orbit over ({cps[i].x}, {cps[i].y}) classified as {v.kind}")
        out.append(v)
    return out[0], out[1]
