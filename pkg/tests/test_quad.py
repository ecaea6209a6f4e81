import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uqft.algebra import lsz_packet, make_tag, rotation, star_packet, transform_packet
from uqft.cache import MAGIC, TransformCache, read_samples, write_samples
from uqft.kernel import MomentMeasure, reduce_for_B
from uqft.quad import (
    ConvergenceError,
    QuadConfig,
    conjoined_integral,
    delta_overlap,
    eval_conjoined,
    eval_term,
    grid_for_slots,
    mc_conjoined,
    mc_delta,
    richardson_weights,
    shell_transform,
    shell_transform_at,
    two_point_overlap,
)
from oracles import lifted_overlap_radial, plane_wave_h

C4 = MomentMeasure(((1.0, 1.0),))


# -- configuration -------------------------------------------------------------

@pytest.mark.parametrize(
    "bad",
    [dict(p_sigmas=0), dict(n_min=2), dict(n_max=5, n_min=9), dict(eps_ladder=(0.1, 0.2)), dict(eps_ladder=(0.1, -0.1)), dict(mc_samples=10)],
)
def test_quadconfig_validation(bad):
    with pytest.raises(ValueError):
        QuadConfig(**bad)


def test_richardson_weights_cancel_even_powers():
    ladder = (0.2, 0.1, 0.05)
    r = richardson_weights(ladder)
    e = np.asarray(ladder)
    assert r.sum() == pytest.approx(1.0, abs=1e-12)
    assert r @ e**2 == pytest.approx(0.0, abs=1e-12)
    assert r @ e**4 == pytest.approx(0.0, abs=1e-12)


# -- two-point overlaps ------------------------------------------------------------

@pytest.mark.parametrize("q,lf,lg", [(0.0, 1.0, 1.0), (0.7, 2.0, 1.5), (1.5, 3.0, 3.0)])
def test_overlap_against_radial_quadrature(q, lf, lg):
    f = lsz_packet((0, 0, q), lf)
    g = lsz_packet((0, 0, q), lg)
    assert two_point_overlap(f, g) == pytest.approx(lifted_overlap_radial(q, lf, lg), rel=1e-9)


@settings(max_examples=30)
@given(st.tuples(*[st.floats(-1, 1)] * 3), st.tuples(*[st.floats(-1, 1)] * 3), st.floats(0.8, 3), st.floats(0.8, 3), st.floats(-3, 3))
def test_overlap_is_hermitian(cf, cg, lf, lg, tau):
    f = lsz_packet(cf, lf, tau)
    g = lsz_packet(cg, lg)
    assert two_point_overlap(f, g) == pytest.approx(np.conj(two_point_overlap(g, f)), rel=1e-10, abs=1e-300)


def test_self_overlap_positive():
    f = lsz_packet((0.3, -0.2, 0.5), 1.7, tau=2.0)
    v = two_point_overlap(f, f)
    assert v.real > 0 and abs(v.imag) < 1e-14 * v.real


def test_box_route_matches_hermite_route():
    # rotating about the packet's own axis changes the route, not the value
    f = lsz_packet((0, 0, 0.6), 2.0)
    g = lsz_packet((0, 0, 0.4), 1.5)
    rot = transform_packet(g, make_tag(lam=rotation((0, 0, 1), 0.9)))
    plain = delta_overlap(star_packet(f), g)[0]
    boxed = delta_overlap(star_packet(f), rot)[0]
    assert boxed == pytest.approx(plain, rel=1e-9)


def test_overlap_monte_carlo_agrees():
    f = lsz_packet((0.2, 0, 0), 2.0)
    g = lsz_packet((0, 0.3, 0), 1.5, tau=1.0)
    exact = delta_overlap(star_packet(f), g)[0]
    mc, err = mc_delta(star_packet(f), g, QuadConfig(mc_samples=200_000))
    assert abs(mc - exact) < 4 * err


def test_overlap_requires_unstarred_lifted():
    f = lsz_packet((0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        two_point_overlap(star_packet(f), f)


def test_translated_overlap_converges_far_out():
    f = lsz_packet((0.8, 0, 0), 2.0)
    g = transform_packet(lsz_packet((0, 0.8, 0), 2.0), make_tag((0, 0, 0, 20.0)))
    val, err = delta_overlap(star_packet(f), g)
    assert abs(val) < 1e-6 and err < 1e-12


# -- shell transforms ----------------------------------------------------------------

def test_shell_transform_matches_pointwise_and_plain_trapezoid():
    p = lsz_packet((0.3, -0.1, 0.2), 1.5, tau=0.4)
    st_ = shell_transform(p, 1, QuadConfig(), upsilon=[0.0, 1.5])
    n = st_.grid.n
    mid = n // 2
    for iu, ups in enumerate(st_.upsilon):
        for idx in [(mid, mid, mid), (mid + 2, mid - 1, mid + 3), (mid - 4, mid, mid + 1)]:
            u = st_.u_axis[list(idx)]
            direct = shell_transform_at(p, 1, ups, u)
            plain = plane_wave_h(p.center, p.width, p.tau, 1, ups, u)
            assert st_.samples[(iu,) + idx] == pytest.approx(direct, abs=1e-9 * st_.bound())
            assert direct == pytest.approx(plain, abs=1e-9 * st_.bound())


def test_shell_transform_bound():
    p = lsz_packet((0.5, 0, 0), 2.0)
    s = shell_transform(p, 1, upsilon=[0.0, 3.0])
    assert np.max(np.abs(s.samples)) <= s.bound() * (1 + 1e-9)


def test_shell_transform_of_starred_slot_is_conjugate():
    p = lsz_packet((0.5, 0.1, 0), 2.0, tau=0.3)
    u = np.array([0.4, -0.2, 1.0])
    a = shell_transform_at(star_packet(p), -1, 0.7, u)
    b = np.conj(shell_transform_at(p, 1, 0.7, u))
    assert a == b


def test_shell_transform_zero_on_vanishing_shell():
    p = lsz_packet((0, 0, 0), 1.0)
    assert shell_transform_at(p, -1, 0.0, np.zeros(3)) == 0


# -- conjoined integrals ------------------------------------------------------------------

def _term(k, m):
    return next(t for t in reduce_for_B(k, m).terms if len(t.factors) == 1)


def _slots(ins, outs, L):
    return [star_packet(lsz_packet(q, L)) for q in reversed(ins)] + [lsz_packet(q, L) for q in outs]


INS = [(1.0, 0, 0), (-1.0, 0.1, 0)]
OUTS = [(0, 1.0, 0.1), (0.1, -1.0, 0)]


def test_conjoined_linear_in_strength_and_zero_when_free():
    term = _term(2, 2)
    slots = _slots(INS, OUTS, 3.0)
    a = eval_conjoined(term, slots, C4).value
    b = eval_conjoined(term, slots, C4.scaled(2.5)).value
    assert b / a == pytest.approx(2.5, rel=1e-12)
    assert eval_conjoined(term, slots, MomentMeasure.empty()).value == 0


def test_conjoined_slot_count_checked():
    with pytest.raises(ValueError):
        eval_conjoined(_term(2, 2), _slots(INS, OUTS, 3.0)[:3], C4)


def test_conjoined_refinement_stable():
    slots = [(p, -1 if p.starred else 1) for p in _slots(INS, OUTS, 3.0)]
    base = conjoined_integral(grid_for_slots(slots, QuadConfig()), slots, QuadConfig())
    fine_cfg = QuadConfig(refine=1.3, p_sigmas=5.0)
    fine = conjoined_integral(grid_for_slots(slots, fine_cfg), slots, fine_cfg)
    assert abs(base[0] - fine[0]) <= 3 * (base[1] + fine[1]) + 1e-12 * abs(fine[0])


def test_conjoined_monte_carlo_small():
    slots = [(p, -1 if p.starred else 1) for p in _slots(INS, OUTS, 3.0)]
    val, err = conjoined_integral(grid_for_slots(slots, QuadConfig()), slots, QuadConfig())
    mc = mc_conjoined(slots, QuadConfig(mc_samples=400_000))
    assert abs(val - mc.value) < 4 * math.hypot(err, mc.stderr)


def test_truncation_raises_unless_allowed():
    slots = [(p, -1 if p.starred else 1) for p in _slots(INS, OUTS, 3.0)]
    tight = QuadConfig(upsilon_cap=1.0)
    with pytest.raises(ConvergenceError):
        conjoined_integral(grid_for_slots(slots, tight), slots, tight)
    loose = replace(tight, allow_truncation=True)
    val, err = conjoined_integral(grid_for_slots(slots, loose), slots, loose)
    assert err > 0 and math.isfinite(abs(val))


def test_eval_term_free_term_is_overlap_product():
    term = next(t for t in reduce_for_B(2, 2).terms if t.conjoined is None)
    slots = _slots(INS, OUTS, 3.0)
    expect = 1.0
    for tp in term.two_points:
        expect *= delta_overlap(slots[tp.first - 1], slots[tp.second - 1])[0]
    assert eval_term(term, slots, C4).value == pytest.approx(expect * float(term.coefficient), rel=1e-14)


# -- transform cache -----------------------------------------------------------------------

def test_cache_file_round_trip(tmp_path):
    arr = (np.arange(24) + 1j * np.arange(24)[::-1]).reshape(2, 3, 4)
    path = tmp_path / "x.uqc"
    write_samples(path, arr, {"note": "t"})
    back, head = read_samples(path)
    assert np.array_equal(back, arr)
    assert head["note"] == "t"
    assert path.read_bytes()[: len(MAGIC)] == MAGIC


def test_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.uqc"
    p.write_bytes(b"not a cache")
    with pytest.raises(ValueError):
        read_samples(p)


def test_transform_cache_hit_and_clear(tmp_path):
    cache = TransformCache(tmp_path / "c")
    p = lsz_packet((0.2, 0, 0), 1.5)
    first = shell_transform(p, 1, upsilon=[0.0, 0.5], cache=cache)
    assert cache.stat()["entries"] == 1
    second = shell_transform(p, 1, upsilon=[0.0, 0.5], cache=cache)
    assert np.array_equal(first.samples, second.samples)
    assert cache.clear() == 1
    assert cache.stat()["entries"] == 0


def test_cache_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("UQFT_CACHE_DIR", str(tmp_path / "envdir"))
    assert TransformCache.from_env().directory == tmp_path / "envdir"
