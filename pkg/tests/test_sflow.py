import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dslab.errors import EndpointError, GeometryError, ResolutionError
from dslab.family import Grid1D, PotentialFamily, build_family, rescale
from dslab.sflow import spectral_flow_circle, spectral_flow_crossing, spectral_flow_partition

LINE = Grid1D.line(-8, 8, 0.1)


def random_line(seed, n, grid=None):
    return build_family({"name": "random-smooth", "n": n, "seed": seed, "amplitude": 2.0},
                        grid or Grid1D.line(-6, 6, 0.1))


def test_constant_family_has_no_flow():
    f = build_family({"name": "constant", "C": [[1.0, 0.3], [0.3, -2.0]]}, LINE)
    rep = spectral_flow_crossing(f)
    assert rep.net_flow == 0 and rep.crossings == [] and rep.agreement
    assert spectral_flow_partition(f) == 0


def test_tanh_single_upward_crossing():
    f = build_family({"name": "scalar-profile"}, LINE)
    rep = spectral_flow_crossing(f)
    assert rep.net_flow == 1 and spectral_flow_partition(f) == 1
    (c,) = rep.crossings
    assert c.direction == 1 and abs(c.location) < 0.1


def test_node_crossing_charged_where_sign_turns_nonnegative():
    f = build_family({"name": "scalar-profile"}, LINE)
    (c,) = spectral_flow_crossing(f).crossings
    zero = int(np.argmin(np.abs(LINE.nodes)))
    assert c.segment == zero - 1 and c.location == pytest.approx(0.0, abs=1e-12)


def test_cancelling_pair():
    f = build_family({"name": "scalar-profile", "A": [[1, 0], [0, -1]], "center": 0.05}, LINE)
    rep = spectral_flow_crossing(f)
    assert rep.net_flow == 0
    assert sorted(c.direction for c in rep.crossings) == [-1, 1]


def test_singular_endpoint_is_rejected():
    S = np.tanh(LINE.nodes)[:, None, None] * 0 + 1.0
    S[0] = 0.0
    with pytest.raises(EndpointError):
        spectral_flow_crossing(PotentialFamily(LINE, S))
    with pytest.raises(EndpointError):
        spectral_flow_partition(PotentialFamily(LINE, S))


def test_unresolvable_near_touch_raises():
    g = Grid1D.line(0, 2, 1.0)
    f = PotentialFamily(g, np.array([1.0, 1e-9, 1.0])[:, None, None])
    with pytest.raises(ResolutionError):
        spectral_flow_crossing(f)


def test_line_and_circle_entry_points_check_geometry():
    with pytest.raises(GeometryError):
        spectral_flow_crossing(build_family({"name": "pauli-rotation"}, Grid1D.circle(16)))
    with pytest.raises(GeometryError):
        spectral_flow_circle(build_family({"name": "scalar-profile"}, LINE))


def test_dual_oracle_on_random_families():
    for seed in range(100):
        f = random_line(seed, 1 + seed % 6)
        rep = spectral_flow_crossing(f)
        assert rep.net_flow == spectral_flow_partition(f), seed
        assert rep.net_flow == sum(c.direction for c in rep.crossings)


def test_circle_examples():
    g = Grid1D.circle(64)
    assert spectral_flow_circle(build_family({"name": "constant"}, g)).net_flow == 0
    rot = spectral_flow_circle(build_family({"name": "pauli-rotation"}, g))
    assert rot.net_flow == 0 and rot.crossings == []


def test_finite_loops_have_zero_flow():
    g = Grid1D.circle(48)
    for seed in range(50):
        f = build_family({"name": "random-smooth", "n": 1 + seed % 4, "seed": seed, "amplitude": 3.0}, g)
        try:
            rep = spectral_flow_circle(f)
        except EndpointError:
            continue
        assert rep.net_flow == 0 and rep.oracle_flow == 0


@given(st.integers(0, 10**5), st.integers(1, 4))
def test_reversal_and_negation_flip_sign(seed, n):
    f = random_line(seed, n)
    sf = spectral_flow_crossing(f, oracle=False).net_flow
    assert spectral_flow_crossing(f.reversed(), oracle=False).net_flow == -sf
    neg = f.with_matrices(-f.matrices)
    assert spectral_flow_crossing(neg, oracle=False).net_flow == -sf


@given(st.integers(0, 10**5), st.integers(1, 4))
def test_concatenation_additivity(seed, n):
    f = random_line(seed, n)
    sv = np.linalg.svd(f.matrices, compute_uv=False)[:, -1]
    inner = np.arange(20, f.size - 20)
    cut = int(inner[np.argmax(sv[inner])])
    g = f.grid.nodes
    left = PotentialFamily(Grid1D("line", g[:cut + 1], f.grid.spacing), f.matrices[:cut + 1])
    right = PotentialFamily(Grid1D("line", g[cut:], f.grid.spacing), f.matrices[cut:])
    total = spectral_flow_crossing(f, oracle=False).net_flow
    assert spectral_flow_crossing(left).net_flow + spectral_flow_crossing(right).net_flow == total


@given(st.integers(0, 10**5), st.sampled_from([0.25, 4.0, 16.0]))
def test_rescaling_invariance(seed, lam):
    f = random_line(seed, 3)
    assert spectral_flow_crossing(rescale(f, lam)).net_flow == spectral_flow_crossing(f).net_flow


@given(st.integers(0, 10**5))
def test_block_additivity(seed):
    f = build_family({"name": "block-random", "sizes": [1, 2, 1], "seed": seed, "amplitude": 2.0},
                     Grid1D.line(-6, 6, 0.1))
    rep = spectral_flow_crossing(f)
    parts = tuple(spectral_flow_crossing(f.block(b)).net_flow for b in range(3))
    assert rep.net_flow == parts and rep.agreement
    mono = PotentialFamily(f.grid, f.matrices)
    assert spectral_flow_crossing(mono).net_flow == sum(parts)


def test_branch_csv(tmp_path):
    f = build_family({"name": "scalar-profile", "A": [[1, 0], [0, -1]]}, Grid1D.line(-2, 2, 0.5))
    rep = spectral_flow_crossing(f, record_branches=True)
    path = rep.write_branches(tmp_path / "b.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["arclength", "branch", "eigenvalue", "block"]
    assert len(rows) == 1 + 2 * f.size
    assert {r[1] for r in rows[1:]} == {"0", "1"}
