import numpy as np
import pytest

from dslab.errors import PreconditionError
from dslab.family import Grid1D, PotentialFamily, build_family, rescale, standard_cover
from dslab.theorems import (
    FAIL,
    INADMISSIBLE,
    PASS,
    EnsembleSpec,
    check_cylinder_replacement,
    check_graded_vanishing,
    check_homotopy_invariance,
    check_index_equals_sf,
    check_parametrix,
    check_relative_index,
    check_rescaling,
    relative_index_values,
)

SMALL = dict(count=3, n_max=3)


def test_tanh_index_equals_flow(tanh8):
    res = check_index_equals_sf(families=[tanh8])
    assert res.verdict == PASS
    (v,) = res.values
    assert v["index"] == v["net_flow"] == v["oracle_flow"] == 1 and v["converged"]


def test_small_ensemble_and_rescaled_copy():
    spec = EnsembleSpec(**SMALL)
    res = check_index_equals_sf(spec)
    assert res.passed and res.instances == 3
    fams = [rescale(spec.family(i), 4.0) for i in range(3)]
    ladder = [(0.05, 2.0), (0.04, 2.0), (0.03, 2.0)]
    assert check_index_equals_sf(families=fams, ladder=ladder).passed


def test_block_vector_equality():
    res = check_index_equals_sf(dict(count=3, blocks=(1, 2, 1)))
    assert res.passed
    for v in res.values:
        assert isinstance(v["index"], list) and v["index"] == v["net_flow"]


def test_checks_are_deterministic_and_parallel_safe():
    a = check_index_equals_sf(SMALL)
    b = check_index_equals_sf(SMALL, jobs=2)
    strip = lambda r: [{k: v for k, v in d.items() if k != "gap_ratio"} for d in r.values]  # noqa: E731
    assert strip(a) == strip(b)


def test_failure_record_rebuilds_instance():
    spec = EnsembleSpec(**SMALL)
    res = check_index_equals_sf(spec)
    desc = res.values[1]["descriptor"]
    again = build_family(desc, spec.grid())
    assert np.array_equal(again.matrices, spec.family(1).matrices)


def test_hypothesis_failure_is_not_a_theorem_failure():
    g = Grid1D.line(-8, 8, 0.1)
    f = build_family({"name": "scalar-profile", "bounds": [0.001, 0.001]}, g)
    res = check_index_equals_sf(families=[f])
    assert res.verdict == INADMISSIBLE and not res.failures


def test_rescaling(tanh8):
    assert check_rescaling(tanh8, [1.0]).passed
    res = check_rescaling(tanh8)
    assert res.passed and res.values[0]["indices"] == [1, 1, 1, 1]


def test_relative_index_identity_rearrangement(tanh8):
    collar = (100, 110)
    i1, i2, i3, i4 = relative_index_values(tanh8, tanh8, collar, [(0.2, 2), (0.15, 2), (0.1, 2)])
    assert i1 + i2 == i3 + i4 == 2 * i1 == 2


def test_relative_index_with_constant_core(tanh8):
    x = tanh8.grid.nodes
    S2 = np.maximum(np.tanh(x), np.tanh(2.5))[:, None, None]
    f2 = PotentialFamily(tanh8.grid, S2, *standard_cover(tanh8.grid, (-2, 3)))
    collar = (110, 120)
    assert np.array_equal(f2.matrices[110:121], tanh8.matrices[110:121])
    res = check_relative_index(tanh8, f2, collar, ladder=[(0.2, 2), (0.15, 2), (0.1, 2)])
    assert res.passed and res.values[0]["indices"] == [1, 0, 1, 0]


def test_relative_index_collar_mismatch(tanh8):
    other = build_family({"name": "scalar-profile", "scale": 2.0}, tanh8.grid)
    with pytest.raises(PreconditionError):
        relative_index_values(tanh8, other, (100, 110))
    res = check_relative_index(tanh8, other, (100, 110))
    assert res.verdict == FAIL and "PreconditionError" in res.failures[0]["reason"]


def test_relative_index_ensemble():
    assert check_relative_index(ensemble=dict(count=3, n_max=3)).passed


def test_cylinder_replacement(tanh8):
    res = check_cylinder_replacement(tanh8)
    assert res.passed and res.values[0]["indices"] == [1, 1, 1]
    const = build_family({"name": "constant", "compact": [-1, 1]}, tanh8.grid)
    assert check_cylinder_replacement(const).values[0]["indices"] == [0, 0, 0]
    blk = build_family({"name": "block-random", "sizes": [1, 1], "seed": 2}, Grid1D.line(-6, 6, 0.2))
    res = check_cylinder_replacement(blk, (4.0, 8.0))
    assert res.passed and isinstance(res.values[0]["indices"][0], list)


def test_homotopy(tanh8):
    const = build_family({"name": "constant", "compact": [-1, 1]}, tanh8.grid)
    ladder = [(0.2, 2), (0.15, 2), (0.1, 2)]
    res = check_homotopy_invariance(const, ladder=ladder)
    assert res.passed and set(res.values[0]["series"]["smoothing"]) == {0}
    res = check_homotopy_invariance(tanh8, ladder=ladder)
    assert res.passed
    assert res.values[0]["series"] == {"constant-ends": [1] * 5, "smoothing": [1] * 5}


def test_graded_vanishing_small():
    res = check_graded_vanishing(SMALL)
    assert res.passed and all(v["index"] == 0 for v in res.values)


def test_parametrix_certificate(tanh8):
    res = check_parametrix(tanh8)
    assert res.passed
    v = res.values[0]
    assert v["off_support_max"] < 1e-8 and v["residual_rank"] <= v["rank_bound"]
