from __future__ import annotations

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbeltrami import (
    ClassifyOptions,
    IntegrateOptions,
    OutOfChartError,
    TrigPolynomial,
    classify_orbit,
    enumerate_eigenspace,
    from_hamiltonian,
    integrate,
    limit_set_estimate,
    sample_eigenfunction,
)
from bbeltrami.census import _project_to_level
from conftest import BABC_POINTS

CHART = from_hamiltonian(1.0, TrigPolynomial.parse("2 sin y + cos x"))  # chart of b-ABC at z = 0


def _closed_form(xz: float, t: np.ndarray, upper: bool) -> np.ndarray:
    # dz/dt = Xz sin z with z(0) = pi/2 (or 3 pi/2): tan(z/2) = +-exp(Xz t)
    z = 2 * np.arctan(np.exp(xz * t))
    return 2 * np.pi - z if upper else z


@pytest.mark.parametrize("p", list(BABC_POINTS))
@pytest.mark.parametrize("upper", [False, True])
@pytest.mark.parametrize("t_end", [5.0, -5.0])
def test_vertical_closed_form(babc, p, upper, t_end):
    z0 = 1.5 * math.pi if upper else 0.5 * math.pi
    tr = integrate(babc, (*p, z0), (0.0, t_end), IntegrateOptions(sample_dt=0.01))
    assert tr.termination == "timeLimit"
    xz = float(babc.Xz(*p))
    assert xz == pytest.approx(-BABC_POINTS[p])
    assert np.max(np.abs(tr.z - _closed_form(xz, tr.t, upper))) <= 1e-6
    assert np.max(np.abs(tr.x - p[0])) <= 1e-12 and np.max(np.abs(tr.y - p[1])) <= 1e-12


def test_direct_chart_closed_form(babc):
    p = (0.0, math.pi / 2)
    tr = integrate(babc, (*p, math.pi / 2), (0.0, 3.0), IntegrateOptions(chart="direct", sample_dt=0.01))
    assert np.max(np.abs(tr.z - _closed_form(3.0, tr.t, False))) <= 1e-6


def test_on_z_stays_on_z(babc):
    tr = integrate(babc, (0.3, 0.4, 0.0), (0.0, 100.0), IntegrateOptions(on_z=True))
    assert np.all(tr.z == 0.0)
    assert tr.H_drift <= 1e-10
    tr = integrate(babc, (0.3, 0.4, math.pi), (0.0, 50.0), IntegrateOptions(on_z=True))
    assert np.all(tr.z == math.pi) and tr.H_drift <= 1e-10


@pytest.mark.parametrize("start", [(0.3, 0.4), (2.0, 5.0), (1.0, 1.0)])
def test_on_z_projection_keeps_phase(babc, start):
    opts = IntegrateOptions(on_z=True, sample_dt=0.01)
    tr = integrate(babc, (*start, 0.0), (0.0, 100.0), opts)
    ref = integrate(babc, (*start, 0.0), (0.0, 100.0), IntegrateOptions(on_z=True, sample_dt=0.01, rtol=1e-13, atol=1e-14))
    assert tr.H_drift <= 1e-10
    assert np.max(np.abs(tr.x - ref.x)) <= 1e-6 and np.max(np.abs(tr.y - ref.y)) <= 1e-6


def test_start_on_z_requires_flag(babc):
    with pytest.raises(ValueError):
        integrate(babc, (0.3, 0.4, 0.0), (0.0, 1.0))
    with pytest.raises(ValueError):
        integrate(CHART, (0.3, 0.4, 0.0), (0.0, 1.0))
    with pytest.raises(OutOfChartError):
        integrate(CHART, (0.3, 0.4, 2.0), (0.0, 1.0))


def _conservation_starts():
    """Chart starts whose orbits stay inside the chart for all positive time."""
    H = CHART.hamiltonian
    out = []
    for q in [(0.3, 0.4), (2.0, 5.0), (1.1, 2.9)]:
        p = _project_to_level(H, np.array(q), 0.0)  # Xz = 0: |z| is constant
        out.append((float(p[0]), float(p[1]), 0.2))
    out.append((0.0, 4.0, 0.5))  # Xz < 0: |z| decays, followed past the floor in log chart
    return out


@pytest.mark.parametrize("start", _conservation_starts())
def test_H_drift_over_100(start):
    opts = IntegrateOptions(stop_at_floor=False)
    tr = integrate(CHART, start, (0.0, 100.0), opts)
    assert tr.termination == "timeLimit"
    assert tr.H_drift <= 1e-8
    tight = integrate(CHART, start, (0.0, 100.0), IntegrateOptions(rtol=1e-13, atol=1e-14, stop_at_floor=False))
    d = (np.array(tr.end[:2]) - np.array(tight.end[:2]) + math.pi) % (2 * math.pi) - math.pi
    assert np.max(np.abs(d)) <= 1e-5
    assert tr.coord[-1] == pytest.approx(tight.coord[-1], abs=1e-5)


def test_H_drift_global(babc):
    tr = integrate(babc, (1.0, 0.3, 1.0), (0.0, 100.0), IntegrateOptions(stop_at_floor=False))
    assert tr.termination == "timeLimit" and tr.H_drift <= 1e-8


@settings(max_examples=15)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0.05, 0.5), st.sampled_from([1, -1]))
def test_time_reversal(x, y, z, s):
    start = (x, y, s * z)
    fw = integrate(CHART, start, (0.0, 3.0), IntegrateOptions(stop_at_floor=False))
    if fw.termination != "timeLimit":
        return
    back = integrate(CHART, fw.end, (3.0, 0.0), IntegrateOptions(stop_at_floor=False), coord0=fw.coord[-1])
    assert np.allclose(back.end[:2], start[:2], atol=1e-6)
    assert back.coord[-1] == pytest.approx(math.log(z), abs=1e-6)
    # the sign of z never changes along an orbit
    assert np.all(np.sign(fw.z) == s)


@settings(max_examples=15)
@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0.05, 0.3))
def test_log_and_direct_charts_agree(x, y, z):
    start = (x, y, z)
    a = integrate(CHART, start, (0.0, 2.0), IntegrateOptions(sample_dt=0.5))
    b = integrate(CHART, start, (0.0, 2.0), IntegrateOptions(chart="direct", sample_dt=0.5))
    assert a.termination == b.termination
    if a.termination != "timeLimit":
        return
    assert np.max(np.abs(a.x - b.x)) <= 1e-8 and np.max(np.abs(a.y - b.y)) <= 1e-8
    assert np.max(np.abs(a.z - b.z)) <= 1e-8


def test_chart_events():
    # above the minimum of H (Xz = 3 > 0) |z| grows and leaves the chart
    tr = integrate(CHART, (0.0, math.pi / 2, 0.1), (0.0, 10.0))
    assert tr.termination == "chartExit"
    assert abs(tr.z[-1]) == pytest.approx(1.0, rel=1e-8)
    tr = integrate(CHART, (0.0, math.pi / 2, 0.1), (0.0, -10.0))
    assert tr.termination == "zFloor"
    assert tr.logz[-1] == pytest.approx(math.log(1e-8), abs=1e-8)


def test_global_floor_and_ceiling(babc):
    tr = integrate(babc, (0.0, math.pi / 2, 1.0), (0.0, 50.0))
    assert tr.termination == "zCeiling" and math.pi - tr.z[-1] < 1e-7
    tr = integrate(babc, (0.0, math.pi / 2, 1.0), (0.0, -50.0))
    assert tr.termination == "zFloor" and tr.z[-1] < 1e-7


# -- classification ---------------------------------------------------------


def test_babc_vertical_orbit_is_spo(babc):
    v = classify_orbit(babc, (0.0, math.pi / 2, math.pi / 2))
    assert v.kind == "singularPeriodic"
    assert v.p_minus.z == 0.0 and v.p_plus.z == math.pi
    assert max(v.endpoint_distances.values()) <= 1e-4
    assert not v.inconclusive


def test_case3_escapes_forward():
    # (pi, 3 pi / 2) is a maximum of H with H = 3 > 0
    v = classify_orbit(CHART, (math.pi, 1.5 * math.pi, 0.01))
    assert v.kind == "escapeForward"
    assert v.p_plus is not None and abs(v.p_plus.x - math.pi) < 1e-6
    assert v.outcomes["backward"].termination == "chartExit"


def test_case4_escapes_backward():
    v = classify_orbit(CHART, (0.0, 0.5 * math.pi, -0.01))
    assert v.kind == "escapeBackward"
    assert v.p_minus.side == -1


@pytest.mark.parametrize("start", [(1.0, 1.0, 1.0), (1.0, 0.3, 1.0)])
def test_generic_babc_orbit_is_generalized_spo(babc, start):
    v = classify_orbit(babc, start, ClassifyOptions(t_max=200.0))
    assert v.kind == "generalizedSPO"
    for o in v.outcomes.values():
        assert o.recurrent and o.limit is not None and o.limit.kind == "closedCurve"
    doc = v.to_json()
    assert doc["alpha"]["kind"] == "closedCurve" and doc["omega"]["kind"] == "closedCurve"


def test_regular_level_chart_orbit_is_inconclusive():
    start = _conservation_starts()[0]
    v = classify_orbit(CHART, start, ClassifyOptions(t_max=20.0))
    assert v.kind == "regular" and v.inconclusive


# -- limit sets -------------------------------------------------------------


def test_limit_set_of_equilibrium_is_point(babc):
    tr = integrate(babc, (0.0, math.pi / 2, 0.0), (0.0, 10.0), IntegrateOptions(on_z=True, sample_dt=0.1))
    ls = limit_set_estimate(tr)
    assert ls.kind == "point" and ls.diameter < 1e-12


def test_limit_set_of_periodic_orbit_is_curve(babc):
    tr = integrate(babc, (1.0, 1.0, 0.0), (0.0, 100.0), IntegrateOptions(on_z=True, sample_dt=0.01))
    ls = limit_set_estimate(tr)
    assert ls.kind == "closedCurve" and ls.thickness <= 1e-3
    assert limit_set_estimate(tr, "alpha").kind == "closedCurve"


def test_limit_set_too_short(babc):
    tr = integrate(babc, (1.0, 1.0, 0.0), (0.0, 0.1), IntegrateOptions(on_z=True, sample_dt=0.05))
    assert limit_set_estimate(tr).kind == "unresolved"


def test_csv_export(babc):
    tr = integrate(babc, (1.0, 1.0, 1.0), (0.0, 1.0), IntegrateOptions(sample_dt=0.25))
    text = tr.to_csv()
    rows = text.strip().split("\n")
    assert rows[0] == "t,x,y,z,H" and len(rows) == len(tr) + 1
    last = [float(v) for v in rows[-1].split(",")]
    assert last == [tr.t[-1], tr.x[-1], tr.y[-1], tr.z[-1], tr.H[-1]]
    buf = io.StringIO()
    assert tr.to_csv(buf) is None and buf.getvalue() == text


@pytest.mark.parametrize("mu", [2, 5])
def test_sampled_field_conserves_H(mu):
    f = sample_eigenfunction(enumerate_eigenspace(mu), 1)
    fld = from_hamiltonian(math.sqrt(mu), f)
    tr = integrate(fld, (0.4, 0.9, 0.1), (0.0, 50.0), IntegrateOptions(stop_at_floor=False))
    assert tr.H_drift <= 1e-8
