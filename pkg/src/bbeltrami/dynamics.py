"""Trajectories of symmetric and global b-fields, orbit verdicts and limit-set sketches.

Integration happens in a chart where ``Z`` sits at infinity:

* symmetric chart fields use ``w = log|z|``, giving ``(x', y', w') = (Xx, Xy, Xz)``;
* global fields on T^3 use ``s = log|tan(z/2)|`` on either z-interval, for which
  ``s' = Xz`` as well.  On ``(0, pi)`` ``z = 2 arctan(e^s)``; on ``(pi, 2 pi)``
  ``z = 2 pi - 2 arctan(e^s)``.  ``s -> -inf`` approaches ``{z = 0}`` and
  ``s -> +inf`` approaches ``{z = pi}``.

Because ``Xz`` is a first integral, the chart coordinate is affine in time and
the right-hand side is independent of it, so the system is nonstiff however
close the orbit gets to ``Z``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Any, Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.spatial import cKDTree

from .bfield import Field, GlobalTorusField, OutOfChartError, SymmetricBField
from .trig import COS, TrigPolynomial

TERMINATIONS = ("timeLimit", "zFloor", "zCeiling", "chartExit", "equilibriumLock")
TWO_PI = 2 * math.pi


def _wrap(d):
    return (np.asarray(d) + math.pi) % TWO_PI - math.pi


class _Rhs:
    """Evaluate ``(Xx, Xy, Xz)`` with a single pass over the union of modes."""

    def __init__(self, comps: Sequence[TrigPolynomial]):
        modes = sorted({(k1, k2) for c in comps for k1, k2, _ in c.terms})
        idx = {m: i for i, m in enumerate(modes)}
        self.k = np.array(modes, dtype=float).reshape(-1, 2)
        self.A = np.zeros((len(comps), len(modes)))
        self.B = np.zeros((len(comps), len(modes)))
        for r, c in enumerate(comps):
            for (k1, k2, ph), amp in c.terms.items():
                (self.A if ph == COS else self.B)[r, idx[(k1, k2)]] += amp

    def __call__(self, x: float, y: float) -> np.ndarray:
        th = self.k[:, 0] * x + self.k[:, 1] * y
        return self.A @ np.cos(th) + self.B @ np.sin(th)


def _id_cache(fn: Callable) -> Callable:
    """Memoize on object identity; fields and polynomials are immutable but unhashable."""
    store: dict[int, tuple[Any, Any]] = {}

    def wrapper(obj):
        hit = store.get(id(obj))
        if hit is not None and hit[0] is obj:
            return hit[1]
        if len(store) > 256:
            store.clear()
        val = fn(obj)
        store[id(obj)] = (obj, val)
        return val

    return wrapper


@_id_cache
def _rhs_for(fld: Field) -> _Rhs:
    return _Rhs([fld.Xx, fld.Xy, fld.Xz])


def _hamiltonian(fld: Field) -> TrigPolynomial:
    return fld.hamiltonian if isinstance(fld, SymmetricBField) else -fld.Xz


# -- trajectories -----------------------------------------------------------


@dataclass(frozen=True)
class IntegrateOptions:
    rtol: float = 1e-10
    atol: float = 1e-12
    method: str = "DOP853"
    chart: str = "log"  # "log" or "direct"
    on_z: bool = False
    z_floor: float = 1e-8
    stop_at_floor: bool = True
    sample_dt: float | None = None
    max_step: float = math.inf


@dataclass
class Trajectory:
    """Samples ``(t, x, y, z)`` in integration order.

    ``coord`` holds the chart coordinate actually integrated (``log|z|`` for
    symmetric fields, ``log|tan(z/2)|`` for global ones, ``z`` in the direct
    chart), which stays exact where ``z`` itself underflows.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    chart: str
    H: np.ndarray
    coord: np.ndarray
    termination: str
    side: int = 1

    def __len__(self) -> int:
        return len(self.t)

    @property
    def logz(self) -> np.ndarray:
        """``log|z|`` per sample, taken from the chart where available."""
        if self.chart.startswith("logZ"):
            return self.coord.copy()
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.z))

    @property
    def H_drift(self) -> float:
        return float(np.max(np.abs(self.H - self.H[0]))) if len(self.H) else 0.0

    @property
    def end(self) -> tuple[float, float, float]:
        return float(self.x[-1]), float(self.y[-1]), float(self.z[-1])

    def to_csv(self, fh=None) -> str | None:
        """Write ``t, x, y, z, H`` rows; returns the text when no handle is given."""
        out = fh if fh is not None else io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["t", "x", "y", "z", "H"])
        for row in zip(self.t, self.x, self.y, self.z, self.H):
            w.writerow([repr(float(v)) for v in row])
        return None if fh is not None else out.getvalue()

    def summary(self) -> dict[str, Any]:
        return {
            "chart": self.chart,
            "samples": len(self),
            "tStart": float(self.t[0]),
            "tEnd": float(self.t[-1]),
            "termination": self.termination,
            "HDrift": self.H_drift,
        }


def _global_z(s: np.ndarray, upper: bool) -> np.ndarray:
    z = 2 * np.arctan(np.exp(s))
    return TWO_PI - z if upper else z


def _event(fn: Callable, terminal: bool, direction: float) -> Callable:
    fn.terminal = terminal
    fn.direction = direction
    return fn

_PROJECT_EVERY = 1.0


def _to_level(jet, Y: np.ndarray, level: float) -> np.ndarray:
    """Gradient-direction Newton steps taking each column of ``Y`` onto ``{H = level}``."""
    Y = np.array(Y, float)
    for _ in range(3):
        v, g, _ = jet(Y[0], Y[1])
        gg = np.einsum("ij,ij->i", g, g)
        step = np.where(gg > 0, (v - level) / np.where(gg > 0, gg, 1.0), 0.0)
        Y -= (step[:, None] * g).T
    return Y


def _solve_projected(f, H: TrigPolynomial, t_span, y_init, opts: IntegrateOptions, evs, t_eval):
    """Planar flow on Z with projection onto the initial level of ``H``.

    The state is projected after every unit of time, so local error cannot
    accumulate in ``H``; reported samples (including dense-output ones) are
    projected as well, since the exact orbit lies on that level.
    """
    t0, t1 = t_span
    sgn = 1.0 if t1 > t0 else -1.0
    level = float(H(*y_init))
    jet = H.jet
    ts, ys = [], []
    ev_t = [[] for _ in evs]
    ev_y = [[] for _ in evs]
    a, u = t0, np.array(y_init, float)
    while sgn * (t1 - a) > 0:
        b = a + sgn * min(_PROJECT_EVERY, abs(t1 - a))
        te = None
        if t_eval is not None:
            te = t_eval[(sgn * (t_eval - a) >= 0) & (sgn * (b - t_eval) > 0)]
            if abs(b - t1) == 0 and t_eval.size and t_eval[-1] == t1:
                te = np.append(te, t1)
        sol = solve_ivp(f, (a, b), u, method=opts.method, rtol=opts.rtol, atol=opts.atol,
                        events=evs or None, dense_output=te is not None, max_step=opts.max_step)
        if sol.status == -1:
            return sol
        if te is not None:
            tt, yy = te, sol.sol(te) if te.size else np.empty((2, 0))
        else:
            tt, yy = sol.t, sol.y
            if ts:
                tt, yy = tt[1:], yy[:, 1:]
        ts.append(tt)
        ys.append(yy)
        for i in range(len(evs)):
            if sol.t_events[i].size:
                ev_t[i].extend(sol.t_events[i])
                ev_y[i].extend(sol.y_events[i])
        u = _to_level(jet, sol.y[:, -1:], level)[:, 0]
        a = b
    return SimpleNamespace(
        status=0,
        message="ok",
        t=np.concatenate(ts),
        y=_to_level(jet, np.hstack(ys), level),
        t_events=[np.array(v) for v in ev_t],
        y_events=[np.array(v).reshape(-1, 2) for v in ev_y],
    )


def integrate(
    fld: Field,
    start: Sequence[float],
    t_span: tuple[float, float],
    opts: IntegrateOptions | None = None,
    events: Sequence[Callable] = (),
    coord0: float | None = None,
) -> Trajectory:
    """Integrate the field from ``start`` over ``t_span`` (which may run backwards).

    Extra ``events`` act on the planar state ``(t, x, y)`` and are always
    non-terminal; their times are attached as ``traj.event_times``.
    ``coord0`` overrides the initial log-chart coordinate, so an orbit can be
    resumed after ``z`` itself has underflowed; ``start[2]`` then only selects
    the side or interval.
    """
    opts = opts or IntegrateOptions()
    x0, y0, z0 = (float(v) for v in start)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise ValueError("empty time span")
    rhs = _rhs_for(fld)
    H = _hamiltonian(fld)
    is_global = isinstance(fld, GlobalTorusField)
    log_floor = math.log(opts.z_floor)
    evs: list[Callable] = []
    names: list[str] = []

    if opts.on_z:
        if is_global:
            comp = int(round(z0 / math.pi)) % 2
            if abs(_wrap(z0 - comp * math.pi)) > 1e-12:
                raise ValueError("on_z start must lie on {z = 0} or {z = pi}")
            zval = comp * math.pi
        else:
            if z0 != 0.0:
                raise ValueError("on_z start must have z = 0")
            zval = 0.0
        chart = "onZ"

        def f(t, u):
            v = rhs(u[0], u[1])
            return v[:2]

        y_init = [x0, y0]
        to_z = lambda c: np.full_like(c, zval)  # noqa: E731
    elif isinstance(fld, SymmetricBField):
        if z0 == 0.0:
            raise ValueError("start lies on Z; set on_z for the restricted dynamics")
        if abs(z0) >= fld.eps:
            raise OutOfChartError(f"|z| = {abs(z0)} outside chart of half-width {fld.eps}")
        sgn = 1.0 if z0 > 0 else -1.0
        log_eps = math.log(fld.eps)
        if opts.chart == "log":
            chart = "logZ(+)" if sgn > 0 else "logZ(-)"

            def f(t, u):
                return rhs(u[0], u[1])

            y_init = [x0, y0, math.log(abs(z0)) if coord0 is None else coord0]
            evs.append(_event(lambda t, u: u[2] - log_floor, opts.stop_at_floor, -1))
            evs.append(_event(lambda t, u: u[2] - log_eps, True, 1))
            to_z = lambda c: sgn * np.exp(c)  # noqa: E731
        elif opts.chart == "direct":
            chart = "direct"

            def f(t, u):
                v = rhs(u[0], u[1])
                return [v[0], v[1], u[2] * v[2]]

            y_init = [x0, y0, z0]
            evs.append(_event(lambda t, u: abs(u[2]) - opts.z_floor, opts.stop_at_floor, -1))
            evs.append(_event(lambda t, u: abs(u[2]) - fld.eps, True, 1))
            to_z = lambda c: c  # noqa: E731
        else:
            raise ValueError(f"unknown chart {opts.chart!r}")
        names = ["zFloor", "chartExit"]
    else:
        zm = z0 % TWO_PI
        if min(zm, abs(zm - math.pi), TWO_PI - zm) == 0.0:
            raise ValueError("start lies on Z; set on_z for the restricted dynamics")
        upper = zm > math.pi
        sgn = -1.0 if upper else 1.0
        if opts.chart == "log":
            chart = "logTan(pi,2pi)" if upper else "logTan(0,pi)"
            s_floor = math.log(opts.z_floor / 2)

            def f(t, u):
                return rhs(u[0], u[1])

            y_init = [x0, y0, math.log(abs(math.tan(zm / 2))) if coord0 is None else coord0]
            evs.append(_event(lambda t, u: u[2] - s_floor, opts.stop_at_floor, -1))
            evs.append(_event(lambda t, u: u[2] + s_floor, opts.stop_at_floor, 1))
            to_z = lambda c: _global_z(c, upper)  # noqa: E731
        elif opts.chart == "direct":
            chart = "directT3"

            def f(t, u):
                v = rhs(u[0], u[1])
                return [v[0], v[1], math.sin(u[2]) * v[2]]

            lo = math.pi if upper else 0.0
            y_init = [x0, y0, zm]
            evs.append(_event(lambda t, u: (u[2] - lo) - opts.z_floor, opts.stop_at_floor, -1))
            evs.append(_event(lambda t, u: (lo + math.pi - u[2]) - opts.z_floor, opts.stop_at_floor, -1))
            to_z = lambda c: c  # noqa: E731
        else:
            raise ValueError(f"unknown chart {opts.chart!r}")
        # (0, pi): s -> -inf is z -> 0; (pi, 2pi): s -> -inf is z -> 2 pi, also {z = 0}.
        names = ["zFloor", "zCeiling"]
        if opts.chart == "direct" and upper:
            names = ["zCeiling", "zFloor"]

    n_own = len(evs)
    for ev in events:
        wrapped = _event(lambda t, u, ev=ev: ev(t, u[0], u[1]), False, getattr(ev, "direction", 0))
        evs.append(wrapped)

    t_eval = None
    if opts.sample_dt:
        n = int(abs(t1 - t0) / opts.sample_dt)
        t_eval = t0 + math.copysign(opts.sample_dt, t1 - t0) * np.arange(n + 1)
    if opts.on_z:
        sol = _solve_projected(f, H, (t0, t1), y_init, opts, evs, t_eval)
    else:
        sol = solve_ivp(
            f, (t0, t1), y_init, method=opts.method, rtol=opts.rtol, atol=opts.atol,
            events=evs or None, t_eval=t_eval, max_step=opts.max_step,
        )
    if sol.status == -1:
        raise FloatingPointError(f"integration failed: {sol.message}")
    t, Y = sol.t, sol.y
    reason = "timeLimit"
    if sol.status == 1:
        for i in range(n_own):
            if sol.t_events[i].size:
                reason = names[i]
                if t_eval is not None:
                    t = np.append(t, sol.t_events[i][-1])
                    Y = np.hstack([Y, sol.y_events[i][-1][:, None]])
                break
    keep = np.concatenate([[True], np.diff(t) != 0])
    t, Y = t[keep], Y[:, keep]
    coord = Y[2] if Y.shape[0] == 3 else np.zeros_like(t)
    z = to_z(coord)
    traj = Trajectory(t, Y[0], Y[1], z, chart, H(Y[0], Y[1]), coord, reason, 1 if opts.on_z else int(sgn))
    traj.event_times = [sol.t_events[i] for i in range(n_own, len(evs))] if sol.t_events else []
    traj.event_states = [sol.y_events[i] for i in range(n_own, len(evs))] if sol.y_events else []
    return traj


# -- limit sets -------------------------------------------------------------


@dataclass(frozen=True)
class LimitSet:
    kind: str  # "point", "closedCurve" or "unresolved"
    centre: tuple[float, float, float] | None = None
    diameter: float = math.nan
    thickness: float = math.nan
    near_z: bool = False
    log_dist_z: float = math.nan

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "centre": None if self.centre is None else list(self.centre),
            "diameter": self.diameter,
            "thickness": self.thickness,
            "nearZ": self.near_z,
            "logDistZ": self.log_dist_z,
        }


def _log_dist_z(traj: Trajectory) -> np.ndarray:
    """``log`` of the distance to the nearest Z component, accurate in the log charts."""
    if traj.chart.startswith("logZ"):
        return traj.coord
    if traj.chart.startswith("logTan"):
        return math.log(2) - np.abs(traj.coord)
    if traj.chart == "onZ":
        return np.full(len(traj), -np.inf)
    with np.errstate(divide="ignore"):
        if traj.chart == "directT3":
            zm = np.asarray(traj.z) % math.pi
            return np.log(np.minimum(zm, math.pi - zm))
        return np.log(np.abs(traj.z))


def _torus(p: np.ndarray) -> np.ndarray:
    """Representatives in ``[0, 2 pi)``; ``%`` can round up to ``2 pi`` itself."""
    q = p % TWO_PI
    return np.where(q >= TWO_PI, 0.0, q)


def _segment_distance(q: np.ndarray, a: np.ndarray, d: np.ndarray, reduce: bool = True) -> np.ndarray:
    """Distance on the torus from each point of ``q`` to the nearest segment ``a + [0,1] d``."""
    v = _wrap(q[:, None, :] - a[None, :, :])
    dd = np.einsum("sj,sj->s", d, d)
    tt = np.clip(np.einsum("qsj,sj->qs", v, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    r = v - tt[..., None] * d[None]
    out = np.sqrt(np.einsum("qsj,qsj->qs", r, r))
    return out.min(axis=1) if reduce else out


def limit_set_estimate(
    traj: Trajectory,
    direction: str = "omega",
    point_tol: float = 1e-4,
    curve_tol: float = 1e-3,
    min_samples: int = 20,
    tail_fraction: float = 0.5,
    z_floor: float = 1e-8,
) -> LimitSet:
    """Sketch the alpha- or omega-limit set from the tail of a trajectory.

    The tail is the last ``tail_fraction`` of the time span on the requested
    side.  It is a point when its diameter is below ``point_tol``; a closed curve
    when its planar projection returns within ``curve_tol`` of where it started
    and every later sample stays within ``curve_tol`` of the first lap.
    """
    if direction not in ("alpha", "omega"):
        raise ValueError("direction must be 'alpha' or 'omega'")
    order = np.argsort(traj.t)
    if direction == "alpha":
        order = order[::-1]
    t = traj.t[order]
    span = abs(t[-1] - t[0])
    tail = order[np.abs(t - t[-1]) <= tail_fraction * span] if span > 0 else order
    if len(tail) < min_samples:
        return LimitSet("unresolved")
    P = np.stack([traj.x[tail], traj.y[tail]], 1)
    ld = _log_dist_z(traj)[tail]
    near = bool(np.all(ld < 0.5 * math.log(z_floor)))
    zc = traj.z[tail]
    ref = P[-1]
    spread = np.abs(_wrap(P - ref)).max(axis=0)
    zspread = float(np.ptp(zc)) if np.all(np.isfinite(zc)) else math.inf
    diam = float(max(np.hypot(*spread), zspread))
    centre = (float(ref[0] % TWO_PI), float(ref[1] % TWO_PI), float(zc[-1]))
    if diam < point_tol:
        return LimitSet("point", centre, diam, 0.0, near, float(ld[-1]))
    # First return: the earliest chord, after the path has moved away, that
    # passes within curve_tol of the first tail point.
    dist0 = np.hypot(*_wrap(P - P[0]).T)
    away = np.nonzero(dist0 > 10 * curve_tol)[0]
    if away.size == 0 or away[0] >= len(P) - 1:
        return LimitSet("unresolved", centre, diam, math.nan, near, float(ld[-1]))
    k0 = int(away[0])
    seg = _wrap(np.diff(P[k0:], axis=0))
    dret = _segment_distance(P[:1], P[k0:-1], seg, reduce=False)[0]
    hit = np.nonzero(dret < curve_tol)[0]
    if hit.size == 0:
        return LimitSet("unresolved", centre, diam, math.nan, near, float(ld[-1]))
    j = k0 + int(hit[0]) + 1
    lap, rest = P[: j + 1], P[j:]
    d = _wrap(np.diff(lap, axis=0))
    tree = cKDTree(_torus(lap[:-1]), boxsize=TWO_PI)
    _, nn = tree.query(_torus(rest))
    best = np.full(len(rest), np.inf)
    for off in (-1, 0):
        idx = np.clip(nn + off, 0, len(d) - 1)
        v = _wrap(rest - lap[idx])
        dd = np.einsum("ij,ij->i", d[idx], d[idx])
        tt = np.clip(np.einsum("ij,ij->i", v, d[idx]) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
        best = np.minimum(best, np.hypot(*(v - tt[:, None] * d[idx]).T))
    thick = float(best.max())
    if thick <= curve_tol:
        return LimitSet("closedCurve", centre, diam, thick, near, float(ld[-1]))
    return LimitSet("unresolved", centre, diam, thick, near, float(ld[-1]))


# -- orbit classification ---------------------------------------------------


@dataclass(frozen=True)
class ClassifyOptions:
    t_max: float = 1000.0
    rtol: float = 1e-10
    atol: float = 1e-12
    z_floor: float = 1e-8
    endpoint_tol: float = 1e-4
    speed_tol: float = 1e-3
    curve_tol: float = 1e-3
    min_returns: int = 5
    directions: tuple[str, ...] = ("backward", "forward")
    recurrence: bool = True
    sample_dt: float = 0.01  # output spacing past the floor, dense enough to sketch closed curves
    critical_points: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class Endpoint:
    """An equilibrium of the restricted field on the Z component ``{z = z}``."""

    x: float
    y: float
    z: float
    side: int

    def key(self, ndigits: int = 6) -> tuple:
        return (round(self.x % TWO_PI, ndigits), round(self.y % TWO_PI, ndigits), round(self.z, 6))

    def to_json(self) -> dict[str, Any]:
        return {"x": self.x, "y": self.y, "z": self.z, "side": self.side}


@dataclass
class DirectionOutcome:
    direction: str
    trajectory: Trajectory
    termination: str
    locked: Endpoint | None
    distance: float
    speed: float
    reached_z: bool
    visit_times: list[float] = field(default_factory=list)
    recurrent: bool = False
    limit: LimitSet | None = None

    @property
    def inconclusive(self) -> bool:
        """Horizon exhausted with |z| bounded away from both Z and the chart edge."""
        return self.locked is None and not self.recurrent and self.termination == "timeLimit"

    @property
    def unresolved_near_z(self) -> bool:
        """Reached the z-floor away from any equilibrium and without detected recurrence."""
        return self.reached_z and self.locked is None and not self.recurrent

    def to_json(self) -> dict[str, Any]:
        tr = self.trajectory
        return {
            "direction": self.direction,
            "termination": self.termination,
            "span": [float(tr.t[0]), float(tr.t[-1])],
            "endpoint": None if self.locked is None else self.locked.to_json(),
            "endpointDistance": self.distance,
            "speed": self.speed,
            "reachedZ": self.reached_z,
            "visitTimes": self.visit_times,
            "recurrent": self.recurrent,
            "unresolvedNearZ": self.unresolved_near_z,
            "limitSet": None if self.limit is None else self.limit.to_json(),
            "HDrift": tr.H_drift,
        }


@dataclass
class OrbitVerdict:
    kind: str  # escapeForward | escapeBackward | singularPeriodic | generalizedSPO | regular
    start: tuple[float, float, float]
    p_minus: Endpoint | None
    p_plus: Endpoint | None
    endpoint_distances: dict[str, float]
    inconclusive: bool
    outcomes: dict[str, DirectionOutcome]
    options: ClassifyOptions

    @property
    def unresolved_near_z(self) -> bool:
        return self.kind == "regular" and any(o.unresolved_near_z for o in self.outcomes.values())

    def to_json(self) -> dict[str, Any]:
        o = self.options
        return {
            "kind": self.kind,
            "start": list(self.start),
            "pMinus": None if self.p_minus is None else self.p_minus.to_json(),
            "pPlus": None if self.p_plus is None else self.p_plus.to_json(),
            "endpointDistances": self.endpoint_distances,
            "inconclusive": self.inconclusive,
            "unresolvedNearZ": self.unresolved_near_z,
            "alpha": _desc(self.outcomes.get("backward")),
            "omega": _desc(self.outcomes.get("forward")),
            "diagnostics": {
                "directions": {k: v.to_json() for k, v in self.outcomes.items()},
                "tolerances": {
                    "tMax": o.t_max, "rtol": o.rtol, "atol": o.atol, "zFloor": o.z_floor,
                    "endpointTol": o.endpoint_tol, "speedTol": o.speed_tol, "curveTol": o.curve_tol,
                    "minReturns": o.min_returns,
                },
            },
        }


def _desc(out: DirectionOutcome | None) -> Any:
    if out is None:
        return None
    if out.locked is not None:
        return {"kind": "point", "endpoint": out.locked.to_json()}
    return out.limit.to_json() if out.limit is not None else {"kind": "unresolved"}


@_id_cache
def _critical_points(Xz: TrigPolynomial) -> np.ndarray:
    from .spectral import morse_audit

    audit = morse_audit(Xz)
    return np.array([[c.x, c.y] for c in audit.critical_points]).reshape(-1, 2)


def _z_component(fld: Field, traj: Trajectory) -> float:
    if isinstance(fld, SymmetricBField):
        return 0.0
    return math.pi if traj.termination == "zCeiling" else 0.0


def _lock(fld: Field, cps: np.ndarray, traj: Trajectory, opts: ClassifyOptions) -> tuple[Endpoint | None, float, float]:
    x, y = float(traj.x[-1]), float(traj.y[-1])
    v = _rhs_for(fld)(x, y)
    speed = float(math.hypot(v[0], v[1]))
    if cps.size == 0:
        return None, math.inf, speed
    d = np.hypot(*_wrap(cps - [x, y]).T)
    i = int(np.argmin(d))
    dist = float(d[i])
    if dist < opts.endpoint_tol and speed < opts.speed_tol:
        return Endpoint(float(cps[i, 0]), float(cps[i, 1]), _z_component(fld, traj), traj.side), dist, speed
    return None, dist, speed


def _join(a: Trajectory, b: Trajectory) -> Trajectory:
    cat = lambda p, q: np.concatenate([p, q[1:]])  # noqa: E731
    return Trajectory(
        cat(a.t, b.t), cat(a.x, b.x), cat(a.y, b.y), cat(a.z, b.z), a.chart,
        cat(a.H, b.H), cat(a.coord, b.coord), b.termination, a.side,
    )


def _run_direction(fld: Field, start, sign: int, cps: np.ndarray, opts: ClassifyOptions) -> DirectionOutcome:
    name = "forward" if sign > 0 else "backward"
    iopt = IntegrateOptions(rtol=opts.rtol, atol=opts.atol, z_floor=opts.z_floor)
    traj = integrate(fld, start, (0.0, sign * opts.t_max), iopt)
    reached = traj.termination in ("zFloor", "zCeiling")
    locked, dist, speed = _lock(fld, cps, traj, opts) if reached else (None, math.inf, math.nan)
    out = DirectionOutcome(name, traj, traj.termination, locked, dist, speed, reached)
    if locked is not None or not reached or not opts.recurrence:
        return out
    # Past the floor |z| keeps shrinking; keep going and count planar returns.
    t_left = opts.t_max - abs(traj.t[-1])
    ref = np.array([traj.x[-1], traj.y[-1]])
    rhs = _rhs_for(fld)

    def closest(t, x, y):
        v = rhs(x, y)
        d = _wrap(np.array([x, y]) - ref)
        return float(d[0] * v[0] + d[1] * v[1])

    closest.direction = sign
    visits: list[float] = []
    cur = traj
    free = IntegrateOptions(
        rtol=opts.rtol, atol=opts.atol, z_floor=opts.z_floor, stop_at_floor=False, sample_dt=opts.sample_dt
    )
    chunk = max(opts.t_max / 20, 1.0)
    while t_left > 0 and len(visits) < opts.min_returns:
        step = min(chunk, t_left)
        t0 = float(cur.t[-1])
        st, c0 = _chart_state(cur)
        nxt = integrate(fld, st, (t0, t0 + sign * step), free, [closest], coord0=c0)
        for tk, yk in zip(nxt.event_times[0], nxt.event_states[0]):
            if np.hypot(*_wrap(yk[:2] - ref)) < opts.curve_tol and abs(tk - t0) > 0:
                visits.append(float(tk))
        cur = _join(cur, nxt)
        t_left -= step
        locked, dist, speed = _lock(fld, cps, cur, opts)
        if locked is not None or nxt.termination == "chartExit":
            break
    out.trajectory = cur
    out.termination = cur.termination if cur.termination != "timeLimit" else traj.termination
    out.locked, out.distance, out.speed = locked, dist, speed
    out.visit_times = visits
    out.recurrent = locked is None and len(visits) >= opts.min_returns
    if out.recurrent:
        out.limit = limit_set_estimate(cur, "omega" if sign > 0 else "alpha", curve_tol=opts.curve_tol, z_floor=opts.z_floor)
    return out


def _chart_state(traj: Trajectory) -> tuple[tuple[float, float, float], float | None]:
    """Resume point for ``traj``: a representative z on the right side plus the chart coordinate."""
    x, y, _ = traj.end
    c = float(traj.coord[-1])
    if traj.chart.startswith("logZ"):
        return (x, y, traj.side * 1e-3), c
    if traj.chart == "logTan(0,pi)":
        return (x, y, math.pi / 2), c
    if traj.chart == "logTan(pi,2pi)":
        return (x, y, 3 * math.pi / 2), c
    return traj.end, None


def classify_orbit(fld: Field, start: Sequence[float], opts: ClassifyOptions | None = None) -> OrbitVerdict:
    """Integrate both ways from ``start`` and classify by the limiting behaviour.

    A direction locks to an equilibrium when it reaches ``z_floor`` with its
    planar position within ``endpoint_tol`` of a critical point of ``Xz`` and
    planar speed below ``speed_tol``.  A direction that reaches ``z_floor``
    without locking is followed further and is recurrent once its planar part
    has come back within ``curve_tol`` of the floor crossing ``min_returns``
    times.
    """
    opts = opts or ClassifyOptions()
    start = tuple(float(v) for v in start)
    if opts.critical_points is not None:
        cps = np.array(opts.critical_points, dtype=float).reshape(-1, 2)
    else:
        cps = _critical_points(fld.Xz)
    outcomes = {}
    for d in opts.directions:
        if d not in ("forward", "backward"):
            raise ValueError(f"unknown direction {d!r}")
        outcomes[d] = _run_direction(fld, start, 1 if d == "forward" else -1, cps, opts)
    fw, bw = outcomes.get("forward"), outcomes.get("backward")
    p_plus = fw.locked if fw else None
    p_minus = bw.locked if bw else None
    dists = {"alpha": bw.distance if bw else math.nan, "omega": fw.distance if fw else math.nan}
    if p_plus and p_minus and p_plus.key() != p_minus.key():
        kind = "singularPeriodic"
    elif p_plus:
        kind = "escapeForward"
    elif p_minus:
        kind = "escapeBackward"
    elif fw and bw and fw.recurrent and bw.recurrent:
        kind = "generalizedSPO"
    else:
        kind = "regular"
    inconclusive = kind == "regular" and any(o.inconclusive for o in outcomes.values())
    return OrbitVerdict(kind, start, p_minus, p_plus, dists, inconclusive, outcomes, opts)
