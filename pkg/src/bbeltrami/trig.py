"""Real trigonometric polynomials on the flat torus (R / 2piZ)^2.

A term ``(k1, k2, phase) -> amp`` stands for ``amp * cos(k1 x + k2 y)`` or
``amp * sin(k1 x + k2 y)``.  Modes are stored in a canonical half-lattice
(``k1 > 0`` or ``k1 == 0 and k2 >= 0``), so two polynomials that agree as
functions compare equal.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping

import numpy as np

COS = "cos"
SIN = "sin"
_PHASES = (COS, SIN)


def canonical_mode(k1: int, k2: int) -> tuple[int, int, int]:
    """Return ``(k1', k2', sign)`` with ``(k1', k2')`` in the half-lattice.

    ``sign`` is -1 when the mode was flipped, which negates a sine term.
    """
    if k1 > 0 or (k1 == 0 and k2 >= 0):
        return k1, k2, 1
    return -k1, -k2, -1


@dataclass(frozen=True, eq=False)
class TrigPolynomial:
    terms: Mapping[tuple[int, int, str], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        acc: dict[tuple[int, int, str], float] = {}
        for key, amp in dict(self.terms).items():
            k1, k2, phase = key
            if phase not in _PHASES:
                raise ValueError(f"unknown phase {phase!r}")
            if int(k1) != k1 or int(k2) != k2:
                raise ValueError(f"non-integer mode {(k1, k2)}")
            c1, c2, sign = canonical_mode(int(k1), int(k2))
            if phase == SIN:
                if c1 == 0 and c2 == 0:
                    continue
                amp = sign * amp
            k = (c1, c2, phase)
            acc[k] = acc.get(k, 0.0) + float(amp)
        clean = {k: v for k, v in sorted(acc.items()) if v != 0.0}
        object.__setattr__(self, "terms", clean)

    # -- construction -----------------------------------------------------

    @classmethod
    def zero(cls) -> TrigPolynomial:
        return cls({})

    @classmethod
    def constant(cls, value: float) -> TrigPolynomial:
        return cls({(0, 0, COS): value})

    @classmethod
    def cos(cls, k1: int, k2: int, amp: float = 1.0) -> TrigPolynomial:
        return cls({(k1, k2, COS): amp})

    @classmethod
    def sin(cls, k1: int, k2: int, amp: float = 1.0) -> TrigPolynomial:
        return cls({(k1, k2, SIN): amp})

    # -- introspection ----------------------------------------------------

    @property
    def modes(self) -> list[tuple[int, int]]:
        return sorted({(k1, k2) for k1, k2, _ in self.terms})

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(k1 == 0 and k2 == 0 for k1, k2, _ in self.terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrigPolynomial):
            return NotImplemented
        return self.terms == other.terms

    def __repr__(self) -> str:
        if not self.terms:
            return "TrigPolynomial(0)"
        parts = [f"{amp:+.6g}*{ph}({k1}x{k2:+d}y)" for (k1, k2, ph), amp in self.terms.items()]
        return "TrigPolynomial(" + " ".join(parts) + ")"

    def allclose(self, other: TrigPolynomial, atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(a) <= atol for a in diff.terms.values())

    # -- evaluation -------------------------------------------------------

    @cached_property
    def _packed(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        modes: dict[tuple[int, int], list[float]] = {}
        for (k1, k2, ph), amp in self.terms.items():
            slot = modes.setdefault((k1, k2), [0.0, 0.0])
            slot[0 if ph == COS else 1] += amp
        if not modes:
            z = np.zeros(0)
            return z, z, z, z
        k = np.array(list(modes.keys()), dtype=float)
        a = np.array(list(modes.values()), dtype=float)
        return k[:, 0], k[:, 1], a[:, 0], a[:, 1]

    def __call__(self, x: Any, y: Any) -> Any:
        k1, k2, ac, as_ = self._packed
        if np.ndim(x) == 0 and np.ndim(y) == 0:
            if k1.size == 0:
                return 0.0
            th = k1 * float(x) + k2 * float(y)
            return float(ac @ np.cos(th) + as_ @ np.sin(th))
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        out = np.zeros(x.shape)
        for j in range(k1.size):
            th = k1[j] * x + k2[j] * y
            if ac[j]:
                out += ac[j] * np.cos(th)
            if as_[j]:
                out += as_[j] * np.sin(th)
        return out

    def on_grid(self, n: int) -> np.ndarray:
        """Values on the uniform ``n x n`` grid, indexed ``[i_x, i_y]``."""
        xs = 2 * np.pi * np.arange(n) / n
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        return self(X, Y)

    def sup_estimate(self, n: int = 64) -> float:
        if self.is_zero():
            return 0.0
        return float(np.max(np.abs(self.on_grid(n))))

    # -- algebra ----------------------------------------------------------

    def __add__(self, other: TrigPolynomial | float) -> TrigPolynomial:
        if not isinstance(other, TrigPolynomial):
            other = TrigPolynomial.constant(float(other))
        acc = dict(self.terms)
        for k, v in other.terms.items():
            acc[k] = acc.get(k, 0.0) + v
        return TrigPolynomial(acc)

    __radd__ = __add__

    def __neg__(self) -> TrigPolynomial:
        return TrigPolynomial({k: -v for k, v in self.terms.items()})

    def __sub__(self, other: TrigPolynomial | float) -> TrigPolynomial:
        return self + (-other)

    def __rsub__(self, other: float) -> TrigPolynomial:
        return (-self) + other

    def __mul__(self, other: TrigPolynomial | float) -> TrigPolynomial:
        if not isinstance(other, TrigPolynomial):
            s = float(other)
            return TrigPolynomial({k: s * v for k, v in self.terms.items()})
        acc: dict[tuple[int, int, str], float] = {}

        def put(k1: int, k2: int, ph: str, amp: float) -> None:
            c1, c2, sign = canonical_mode(k1, k2)
            if ph == SIN:
                amp *= sign
            key = (c1, c2, ph)
            acc[key] = acc.get(key, 0.0) + amp

        for (a1, a2, pa), u in self.terms.items():
            for (b1, b2, pb), v in other.terms.items():
                w = 0.5 * u * v
                s1, s2 = a1 + b1, a2 + b2
                d1, d2 = a1 - b1, a2 - b2
                if pa == COS and pb == COS:
                    put(d1, d2, COS, w)
                    put(s1, s2, COS, w)
                elif pa == SIN and pb == SIN:
                    put(d1, d2, COS, w)
                    put(s1, s2, COS, -w)
                elif pa == SIN and pb == COS:
                    put(s1, s2, SIN, w)
                    put(d1, d2, SIN, w)
                else:  # cos(a) sin(b)
                    put(s1, s2, SIN, w)
                    put(d1, d2, SIN, -w)
        return TrigPolynomial(acc)

    __rmul__ = __mul__

    def __truediv__(self, s: float) -> TrigPolynomial:
        return self * (1.0 / float(s))

    # -- calculus ---------------------------------------------------------

    def derivative(self, nx: int = 0, ny: int = 0) -> TrigPolynomial:
        out = self
        for _ in range(nx):
            out = out._d(0)
        for _ in range(ny):
            out = out._d(1)
        return out

    def _d(self, axis: int) -> TrigPolynomial:
        acc: dict[tuple[int, int, str], float] = {}
        for (k1, k2, ph), amp in self.terms.items():
            k = (k1, k2)[axis]
            if k == 0:
                continue
            if ph == COS:
                acc[(k1, k2, SIN)] = acc.get((k1, k2, SIN), 0.0) - k * amp
            else:
                acc[(k1, k2, COS)] = acc.get((k1, k2, COS), 0.0) + k * amp
        return TrigPolynomial(acc)

    def dx(self) -> TrigPolynomial:
        return self._d(0)

    def dy(self) -> TrigPolynomial:
        return self._d(1)

    def laplacian(self) -> TrigPolynomial:
        return TrigPolynomial(
            {(k1, k2, ph): -(k1 * k1 + k2 * k2) * amp for (k1, k2, ph), amp in self.terms.items()}
        )

    def translate(self, a: float, b: float) -> TrigPolynomial:
        """The polynomial ``(x, y) -> self(x + a, y + b)``."""
        acc: dict[tuple[int, int, str], float] = {}
        for (k1, k2, ph), amp in self.terms.items():
            c, s = math.cos(k1 * a + k2 * b), math.sin(k1 * a + k2 * b)
            if ph == COS:
                acc[(k1, k2, COS)] = acc.get((k1, k2, COS), 0.0) + amp * c
                acc[(k1, k2, SIN)] = acc.get((k1, k2, SIN), 0.0) - amp * s
            else:
                acc[(k1, k2, SIN)] = acc.get((k1, k2, SIN), 0.0) + amp * c
                acc[(k1, k2, COS)] = acc.get((k1, k2, COS), 0.0) + amp * s
        return TrigPolynomial(acc)

    @cached_property
    def jet(self) -> "TrigJet":
        return TrigJet(self)

    # -- serialization ----------------------------------------------------

    def to_json(self) -> list[dict[str, Any]]:
        return [
            {"k": [k1, k2], "phase": ph, "amp": amp} for (k1, k2, ph), amp in self.terms.items()
        ]

    @classmethod
    def from_json(cls, data: Iterable[Mapping[str, Any]]) -> TrigPolynomial:
        acc: dict[tuple[int, int, str], float] = {}
        for i, item in enumerate(data):
            try:
                k1, k2 = item["k"]
                ph = item["phase"]
                amp = float(item["amp"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"term {i}: expected {{'k': [k1, k2], 'phase', 'amp'}}") from exc
            if ph not in _PHASES:
                raise ValueError(f"term {i}: phase must be 'cos' or 'sin', got {ph!r}")
            if int(k1) != k1 or int(k2) != k2:
                raise ValueError(f"term {i}: non-integer mode {[k1, k2]}")
            key = (int(k1), int(k2), ph)
            acc[key] = acc.get(key, 0.0) + amp
        return cls(acc)

    @classmethod
    def parse(cls, text: str) -> TrigPolynomial:
        """Parse expressions such as ``"-2 sin y - cos x"`` or ``"0.5*cos(2x-3y) + 1"``."""
        return _parse(text)


class TrigJet:
    """Value, gradient and Hessian of a polynomial at many points at once."""

    def __init__(self, f: TrigPolynomial):
        self.k1, self.k2, self.ac, self.as_ = f._packed

    def __call__(self, x: Any, y: Any) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        th = np.multiply.outer(x, self.k1) + np.multiply.outer(y, self.k2)
        c, s = np.cos(th), np.sin(th)
        val = c @ self.ac + s @ self.as_
        # d/dth of (ac cos + as sin) = -ac sin + as cos
        d1 = -s * self.ac + c * self.as_
        d2 = -(c * self.ac + s * self.as_)
        grad = np.stack([d1 @ self.k1, d1 @ self.k2], axis=-1)
        hxx = d2 @ (self.k1 * self.k1)
        hxy = d2 @ (self.k1 * self.k2)
        hyy = d2 @ (self.k2 * self.k2)
        hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return val, grad, hess


_TERM = re.compile(
    r"^(?:(?P<coef>(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)\*?)?"
    r"(?:(?P<fn>cos|sin)(?:\((?P<arg>[^()]*)\)|(?P<bare>[^()]*)))?$"
)
_LIN = re.compile(r"([+-]?)(\d*)\*?([xy])")


def _split_signed(text: str) -> list[str]:
    parts, depth, cur = [], 0, ""
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        prev = text[i - 1] if i else ""
        if ch in "+-" and depth == 0 and cur and prev not in "eE*(":
            parts.append(cur)
            cur = ""
        cur += ch
    if cur:
        parts.append(cur)
    return parts


def _parse_linear(arg: str) -> tuple[int, int]:
    k = {"x": 0, "y": 0}
    pos = 0
    for m in _LIN.finditer(arg):
        if m.start() != pos:
            raise ValueError(f"cannot parse argument {arg!r}")
        if pos and not m.group(1):
            raise ValueError(f"cannot parse argument {arg!r}")
        sign = -1 if m.group(1) == "-" else 1
        k[m.group(3)] += sign * (int(m.group(2)) if m.group(2) else 1)
        pos = m.end()
    if pos != len(arg) or pos == 0:
        raise ValueError(f"cannot parse argument {arg!r}")
    return k["x"], k["y"]


def _parse(text: str) -> TrigPolynomial:
    src = text.replace(" ", "").lower()
    if not src:
        raise ValueError("empty expression")
    acc: dict[tuple[int, int, str], float] = {}
    for raw in _split_signed(src):
        sign = 1.0
        body = raw
        while body and body[0] in "+-":
            sign *= -1.0 if body[0] == "-" else 1.0
            body = body[1:]
        m = _TERM.match(body)
        if not body or m is None or (m.group("coef") is None and m.group("fn") is None):
            raise ValueError(f"cannot parse term {raw!r} in {text!r}")
        coef = sign * (float(m.group("coef")) if m.group("coef") else 1.0)
        if m.group("fn") is None:
            key = (0, 0, COS)
        else:
            k1, k2 = _parse_linear(m.group("arg") if m.group("arg") is not None else m.group("bare"))
            key = (k1, k2, m.group("fn"))
        acc[key] = acc.get(key, 0.0) + coef
    return TrigPolynomial(acc)
