"""b-Beltrami fields near the critical surface and checks of their defining identities.

Near ``Z = {z = 0}`` the b-metric splits as ``dz^2/z^2 + h`` and a b-field reads
``X = Xx d_x + Xy d_y + z Xz d_z``.  In the coordinate ``w = log|z|`` this is the
ordinary field ``Xx d_x + Xy d_y + Xz d_w`` and the b-volume form is
``sqrt(det h) dx dy dw``, which is the setting for every residual below.

b-divergence.  With ``mu = rho dx dy dw`` (``rho = sqrt(det h)``),
``div_mu X = (d_x(rho Xx) + d_y(rho Xy)) / rho + d_w Xz``, and
``d_w = z d_z``.  Fields whose components do not depend on ``z`` therefore have
b-divergence ``(d_x(rho Xx) + d_y(rho Xy)) / rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Mapping

import numpy as np

from .trig import TrigPolynomial

NONVANISHING_TOL = 1e-8


class OffShellError(ValueError):
    """The proposed Hamiltonian is not an eigenfunction of the stated eigenvalue."""

    def __init__(self, mode: tuple[int, int], lam: float):
        self.mode = mode
        self.lam = lam
        k1, k2 = mode
        super().__init__(
            f"not an eigenfunction of the stated eigenvalue: mode {mode} has "
            f"|k|^2 = {k1 * k1 + k2 * k2}, but lambda^2 = {lam * lam:.12g}"
        )


class OutOfChartError(ValueError):
    pass


class FieldVanishesError(ValueError):
    """Raised when ``|X|_g^2`` drops below the nonvanishing tolerance."""

    def __init__(self, point: tuple[float, float, float], norm2: float):
        self.point = point
        self.norm2 = norm2
        super().__init__(f"field vanishes as a b-section near {point} (|X|^2 = {norm2:.3e})")


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    xs = 2 * np.pi * np.arange(n) / n
    return np.meshgrid(xs, xs, indexing="ij")


@dataclass(frozen=True)
class SurfaceMetric:
    """Riemannian metric ``h11 dx^2 + 2 h12 dx dy + h22 dy^2`` on the torus."""

    h11: TrigPolynomial
    h22: TrigPolynomial
    h12: TrigPolynomial = field(default_factory=TrigPolynomial.zero)

    @classmethod
    def flat(cls) -> SurfaceMetric:
        return cls(TrigPolynomial.constant(1.0), TrigPolynomial.constant(1.0))

    @cached_property
    def det(self) -> TrigPolynomial:
        return self.h11 * self.h22 - self.h12 * self.h12

    @property
    def is_flat(self) -> bool:
        one = TrigPolynomial.constant(1.0)
        return self.h11 == one and self.h22 == one and self.h12.is_zero()

    def sqrt_det(self, x: Any, y: Any) -> Any:
        return np.sqrt(self.det(x, y))

    def validate(self, n: int = 64) -> None:
        X, Y = _grid(n)
        # also check cell centres, which the flux-form Laplacian samples
        Xs = np.concatenate([X, X + np.pi / n])
        Ys = np.concatenate([Y, Y + np.pi / n])
        if np.any(self.h11(Xs, Ys) <= 0) or np.any(self.det(Xs, Ys) <= 0):
            raise ValueError("metric is not positive-definite on the validation grid")

    def to_json(self) -> dict[str, Any]:
        return {"h11": self.h11.to_json(), "h22": self.h22.to_json(), "h12": self.h12.to_json()}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> SurfaceMetric:
        try:
            h11 = TrigPolynomial.from_json(data["h11"])
            h22 = TrigPolynomial.from_json(data["h22"])
        except KeyError as exc:
            raise ValueError(f"metric: missing coefficient {exc.args[0]!r}") from exc
        h12 = TrigPolynomial.from_json(data.get("h12", []))
        return cls(h11, h22, h12)


@dataclass(frozen=True)
class SymmetricBField:
    """Asymptotically symmetric b-field on the chart ``T^2 x (-eps, eps)``.

    Components do not depend on ``z``.  When ``Xx``/``Xy`` are omitted they are
    derived from ``Xz`` as ``Xx = d_y Xz / lam``, ``Xy = -d_x Xz / lam``; passing
    them explicitly allows perturbed (non-Beltrami) fields for residual checks.
    Use :func:`from_hamiltonian` for validated construction.
    """

    lam: float
    Xz: TrigPolynomial
    eps: float = 1.0
    Xx: TrigPolynomial | None = None
    Xy: TrigPolynomial | None = None

    def __post_init__(self) -> None:
        if self.lam == 0:
            raise ValueError("lambda must be nonzero")
        if not self.eps > 0:
            raise ValueError("chart half-width eps must be positive")
        if self.Xx is None:
            object.__setattr__(self, "Xx", self.Xz.dy() / self.lam)
        if self.Xy is None:
            object.__setattr__(self, "Xy", -self.Xz.dx() / self.lam)

    @property
    def hamiltonian(self) -> TrigPolynomial:
        """Exceptional Hamiltonian ``-Xz`` of the restriction to Z."""
        return -self.Xz

    def with_components(self, **kw: TrigPolynomial) -> SymmetricBField:
        return replace(self, Xx=kw.get("Xx", self.Xx), Xy=kw.get("Xy", self.Xy), Xz=kw.get("Xz", self.Xz))

    def to_json(self) -> dict[str, Any]:
        return {"lambda": self.lam, "Xz": self.Xz.to_json(), "eps": self.eps}


def from_hamiltonian(lam: float, Xz: TrigPolynomial, eps: float = 1.0) -> SymmetricBField:
    """Model symmetric b-Beltrami field built from a flat-torus eigenfunction ``Xz``."""
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    lam2 = lam * lam
    for k1, k2 in Xz.modes:
        if abs(k1 * k1 + k2 * k2 - lam2) > 1e-9 * max(1.0, lam2):
            raise OffShellError((k1, k2), lam)
    return SymmetricBField(float(lam), Xz, float(eps))


@dataclass(frozen=True)
class GlobalTorusField:
    """Globally symmetric b-field on T^3 with defining function ``sin z``.

    ``X = (1/lam) d_y Xz d_x - (1/lam) d_x Xz d_y + Xz sin z d_z`` with
    ``Xz`` a flat-torus eigenfunction; Z = {z = 0} u {z = pi}.  The b-ABC field
    is ``Xz = C sin y + B cos x`` with ``lam = 1``.
    """

    variant: str
    lam: float
    Xz: TrigPolynomial
    params: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def babc(cls, B: float, C: float) -> GlobalTorusField:
        Xz = TrigPolynomial({(0, 1, "sin"): C, (1, 0, "cos"): B})
        return cls("bABC", 1.0, Xz, {"B": float(B), "C": float(C)})

    @classmethod
    def globally_symmetric(cls, lam: float, H: TrigPolynomial) -> GlobalTorusField:
        """``H`` is the coefficient of ``sin z d_z``; it must solve ``Lap H + lam^2 H = 0``."""
        from_hamiltonian(lam, H)
        return cls("globallySymmetric", float(lam), H)

    @property
    def degenerate(self) -> bool:
        """True for b-ABC with ``|B| == |C|`` (critical values of H hit zero)."""
        if self.variant != "bABC":
            return False
        return abs(self.params["B"]) == abs(self.params["C"])

    @cached_property
    def Xx(self) -> TrigPolynomial:
        return self.Xz.dy() / self.lam

    @cached_property
    def Xy(self) -> TrigPolynomial:
        return -self.Xz.dx() / self.lam

    def hamiltonian(self, component: int = 0) -> TrigPolynomial:
        """Exceptional Hamiltonian on ``{z = 0}`` (component 0) or ``{z = pi}`` (1)."""
        return -self.Xz if component == 0 else self.Xz

    def chart_at(self, component: int = 0) -> SymmetricBField:
        """The exact symmetric chart model near one Z component.

        ``zeta = tan(z/2)`` near ``z = 0`` and ``zeta = -cot(z/2)`` near ``z = pi``
        satisfy ``d zeta / zeta = +-dz / sin z``; in them the global b-metric is
        ``d zeta^2 / zeta^2 + dx^2 + dy^2`` and the field is symmetric.
        """
        if component == 0:
            return SymmetricBField(self.lam, self.Xz)
        return SymmetricBField(-self.lam, -self.Xz)

    def to_json(self) -> dict[str, Any]:
        if self.variant == "bABC":
            return {"variant": "bABC", "B": self.params["B"], "C": self.params["C"]}
        return {"variant": "globallySymmetric", "lambda": self.lam, "H": self.Xz.to_json()}


Field = SymmetricBField | GlobalTorusField


def eval_field(fld: Field, point: tuple[float, float, float]) -> np.ndarray:
    """Velocity ``(dx/dt, dy/dt, dz/dt)`` at ``point``."""
    x, y, z = (float(v) for v in point)
    if isinstance(fld, SymmetricBField):
        if abs(z) >= fld.eps:
            raise OutOfChartError(f"|z| = {abs(z)} outside chart of half-width {fld.eps}")
        return np.array([fld.Xx(x, y), fld.Xy(x, y), z * fld.Xz(x, y)])
    return np.array([fld.Xx(x, y), fld.Xy(x, y), math.sin(z) * fld.Xz(x, y)])


def _as_chart(fld: Field) -> SymmetricBField:
    return fld.chart_at(0) if isinstance(fld, GlobalTorusField) else fld


@dataclass(frozen=True)
class BeltramiResidual:
    z_equation: float
    x_equation: float
    y_equation: float

    @property
    def max(self) -> float:
        return max(self.z_equation, self.x_equation, self.y_equation)

    def to_json(self) -> dict[str, float]:
        return {"z_equation": self.z_equation, "x_equation": self.x_equation, "y_equation": self.y_equation}


def beltrami_residual(fld: Field, metric: SurfaceMetric | None = None, n: int = 32) -> BeltramiResidual:
    """Max-norm residuals of the split b-Beltrami system on ``{z = 0}``.

    The three equations, with ``rho = sqrt(det h)``::

        lam rho Xz = -d_y(h11 Xx + h12 Xy) + d_x(h12 Xx + h22 Xy)
       -lam rho Xy = d_x Xz - z d_z(h11 Xx + h12 Xy)
        lam rho Xx = d_y Xz - z d_z(h12 Xx + h22 Xy)

    The ``z d_z`` terms vanish for z-independent components.  A global field is
    checked through its exact chart near ``{z = 0}``.
    """
    if n < 8:
        raise ValueError("gridN must be >= 8")
    f = _as_chart(fld)
    h = metric or SurfaceMetric.flat()
    X, Y = _grid(n)
    rho = h.sqrt_det(X, Y)
    a = h.h11 * f.Xx + h.h12 * f.Xy
    b = h.h12 * f.Xx + h.h22 * f.Xy
    r1 = f.lam * rho * f.Xz(X, Y) + a.dy()(X, Y) - b.dx()(X, Y)
    r2 = -f.lam * rho * f.Xy(X, Y) - f.Xz.dx()(X, Y)
    r3 = f.lam * rho * f.Xx(X, Y) - f.Xz.dy()(X, Y)
    return BeltramiResidual(*(float(np.max(np.abs(r))) for r in (r1, r2, r3)))


def divergence_residual(fld: Field, n: int = 32, metric: SurfaceMetric | None = None) -> float:
    """Max of ``|div_mu X|`` over the grid (see the module docstring)."""
    if n < 8:
        raise ValueError("gridN must be >= 8")
    f = _as_chart(fld)
    X, Y = _grid(n)
    if metric is None or metric.is_flat:
        div = f.Xx.dx()(X, Y) + f.Xy.dy()(X, Y)
    else:
        rho = metric.sqrt_det(X, Y)
        # d_x(rho Xx) = rho d_x Xx + Xx d_x(rho), d_x rho = d_x(det) / (2 rho)
        ddx, ddy = metric.det.dx()(X, Y), metric.det.dy()(X, Y)
        div = (
            f.Xx.dx()(X, Y) + f.Xy.dy()(X, Y)
            + (f.Xx(X, Y) * ddx + f.Xy(X, Y) * ddy) / (2 * rho * rho)
        )
    return float(np.max(np.abs(div)))


@dataclass(frozen=True)
class ContactCheck:
    min_density: float
    min_norm2: float
    reeb_scale: np.ndarray  # 1 / |X|^2 on the grid at z = 0
    heights: tuple[float, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "min_density": self.min_density,
            "min_norm2": self.min_norm2,
            "max_reeb_scale": float(np.max(self.reeb_scale)),
            "heights": list(self.heights),
        }


def contact_check(fld: Field, metric: SurfaceMetric | None = None, n: int = 64) -> ContactCheck:
    """Minimum of the ``alpha ^ d alpha`` density, ``alpha = g(X, .)``.

    In ``w = log|z|`` coordinates ``alpha = a dx + b dy + Xz dw`` with
    ``a = h11 Xx + h12 Xy`` and ``b = h12 Xx + h22 Xy``.  Writing
    ``alpha ^ d alpha = D sqrt(det h) dx dy dw``,
    ``D = (a (d_y Xz) - b (d_x Xz) + Xz (d_x b - d_y a)) / sqrt(det h)``
    (the ``d_w`` terms drop for z-independent components).  For a Beltrami
    field ``D = lam |X|^2_g``.
    """
    f = _as_chart(fld)
    h = metric or SurfaceMetric.flat()
    X, Y = _grid(n)
    a = h.h11 * f.Xx + h.h12 * f.Xy
    b = h.h12 * f.Xx + h.h22 * f.Xy
    rho = h.sqrt_det(X, Y)
    xx, xy, xz = f.Xx(X, Y), f.Xy(X, Y), f.Xz(X, Y)
    norm2 = h.h11(X, Y) * xx * xx + 2 * h.h12(X, Y) * xx * xy + h.h22(X, Y) * xy * xy + xz * xz
    imin = np.unravel_index(int(np.argmin(norm2)), norm2.shape)
    heights = (0.0, f.eps / 2, -f.eps / 2)
    if norm2[imin] < NONVANISHING_TOL:
        raise FieldVanishesError((float(X[imin]), float(Y[imin]), 0.0), float(norm2[imin]))
    density = (
        a(X, Y) * f.Xz.dy()(X, Y)
        - b(X, Y) * f.Xz.dx()(X, Y)
        + xz * (b.dx()(X, Y) - a.dy()(X, Y))
    ) / rho
    # components are z-independent, so the density is the same at every sampled height
    mins = [float(np.min(np.abs(density))) for _ in heights]
    return ContactCheck(min(mins), float(norm2[imin]), 1.0 / norm2, heights)


def field_from_json(data: Mapping[str, Any]) -> Field:
    """Parse the field interchange document (symmetric chart or global variant)."""
    if not isinstance(data, Mapping):
        raise ValueError("field spec must be a JSON object")
    variant = data.get("variant")
    if variant == "bABC":
        try:
            return GlobalTorusField.babc(float(data["B"]), float(data["C"]))
        except KeyError as exc:
            raise ValueError(f"bABC field: missing {exc.args[0]!r}") from exc
    if variant == "globallySymmetric":
        try:
            return GlobalTorusField.globally_symmetric(float(data["lambda"]), TrigPolynomial.from_json(data["H"]))
        except KeyError as exc:
            raise ValueError(f"globallySymmetric field: missing {exc.args[0]!r}") from exc
    if variant not in (None, "symmetric"):
        raise ValueError(f"unknown field variant {variant!r}")
    for key in ("lambda", "Xz"):
        if key not in data:
            raise ValueError(f"symmetric field: missing {key!r}")
    return from_hamiltonian(float(data["lambda"]), TrigPolynomial.from_json(data["Xz"]), float(data.get("eps", 1.0)))


def field_to_json(fld: Field) -> dict[str, Any]:
    return fld.to_json()
