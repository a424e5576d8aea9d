import numpy as np
import pytest

from kgedura.errors import ConfigError
from kgedura.theory import (FactorQuad, FactorTriple, balanced_rescale,
                            column_norm_products, global_dura_sum,
                            global_dura_sum_columnwise, rank1_nuclear_oracle,
                            run_verification, temporal_dura1_sum,
                            verify_static_balance, verify_temporal_balance)


def _triple(u, r, v):
    return FactorTriple(
        U=np.asarray(u, dtype=float).reshape(-1, 1),
        R=np.asarray(r, dtype=float).reshape(-1, 1),
        V=np.asarray(v, dtype=float).reshape(-1, 1),
    )


def _random_triple(rng, n_ent=3, n_rel=4, dim=5):
    return FactorTriple(U=rng.standard_normal((n_ent, dim)),
                        R=rng.standard_normal((n_rel, dim)),
                        V=rng.standard_normal((n_ent, dim)))


def _random_quad(rng, n_ent=3, n_rel=3, n_time=2, dim=4):
    return FactorQuad(U=rng.standard_normal((n_ent, dim)),
                      R=rng.standard_normal((n_rel, dim)),
                      V=rng.standard_normal((n_ent, dim)),
                      T=rng.standard_normal((n_time, dim)))


def test_global_sum_zero_factors():
    f = _triple([0.0], [0.0], [0.0])
    assert global_dura_sum(f) == 0.0


def test_global_sum_hand_value():
    # |R|=1, D=1, u=2, r=2, v=1: 16 + 1 + 4 + 4
    f = _triple([2.0], [2.0], [1.0])
    assert global_dura_sum(f) == pytest.approx(25.0)
    assert global_dura_sum_columnwise(f) == pytest.approx(25.0)


def test_global_sum_two_routes_agree():
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = _random_triple(rng)
        a, b = global_dura_sum(f), global_dura_sum_columnwise(f)
        assert a == pytest.approx(b, rel=1e-12)


def test_balanced_rescale_hand_example():
    f = _triple([2.0], [2.0], [1.0])
    g = balanced_rescale(f)
    prod = float(g.U[0, 0] * g.R[0, 0] * g.V[0, 0])
    assert abs(prod) == pytest.approx(4.0)
    assert global_dura_sum(g) == pytest.approx(16.0)


def test_balanced_rescale_fixed_point():
    f = _triple([2.0], [2.0], [1.0])
    g = balanced_rescale(f)
    h = balanced_rescale(g)
    for a, b in ((g.U, h.U), (g.R, h.R), (g.V, h.V)):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_balanced_rescale_random_instances():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f = _random_triple(rng)
        g = balanced_rescale(f)
        assert np.max(np.abs(f.reconstruct() - g.reconstruct())) <= 1e-9
        assert global_dura_sum(g) <= global_dura_sum(f) * (1 + 1e-12)


def test_balanced_rescale_drops_zero_columns():
    rng = np.random.default_rng(1)
    f = _random_triple(rng, dim=4)
    f.U[:, 2] = 0.0  # dead column contributes nothing
    g = balanced_rescale(f)
    assert g.U.shape[1] == 3
    assert np.max(np.abs(f.reconstruct() - g.reconstruct())) <= 1e-9


def test_balanced_rescale_rejects_all_zero():
    with pytest.raises(ConfigError):
        balanced_rescale(_triple([0.0], [1.0], [1.0]))


def test_am_gm_bound_and_equality_condition():
    rng = np.random.default_rng(2)
    for _ in range(20):
        f = _random_triple(rng)
        bound = global_dura_sum(f) / (4.0 * np.sqrt(f.R.shape[0]))
        prods = column_norm_products(f.U, f.R, f.V)
        assert bound >= prods * (1 - 1e-9)
        g = balanced_rescale(f)
        bound_eq = global_dura_sum(g) / (4.0 * np.sqrt(g.R.shape[0]))
        prods_eq = column_norm_products(g.U, g.R, g.V)
        assert bound_eq == pytest.approx(prods_eq, rel=1e-9)


def test_rank1_nuclear_oracle_values():
    assert rank1_nuclear_oracle(np.array([1.0]), np.array([1.0]),
                                np.array([1.0])) == 1.0
    assert rank1_nuclear_oracle(np.array([2.0, 0.0]), np.array([0.0, 3.0]),
                                np.array([1.0, 0.0])) == pytest.approx(6.0)
    assert rank1_nuclear_oracle(np.array([2.0, 0.0]), np.array([0.0, 3.0]),
                                np.array([1.0, 0.0]),
                                np.array([1.0, 1.0])) == \
        pytest.approx(6.0 * np.sqrt(2.0))


def test_rank1_minimized_sum_equals_scaled_nuclear_norm():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        f = _random_triple(rng, dim=1)
        g = balanced_rescale(f)
        nuclear = rank1_nuclear_oracle(f.U[:, 0], f.R[:, 0], f.V[:, 0])
        assert global_dura_sum(g) == pytest.approx(
            4.0 * np.sqrt(f.R.shape[0]) * nuclear, rel=1e-9)


def test_static_balance_report_passes():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rep = verify_static_balance(_random_triple(rng))
        assert rep.passed, rep


def test_temporal_balance_hand_example_dura1():
    f = FactorQuad(U=np.array([[1.0]]), R=np.array([[2.0]]),
                   V=np.array([[1.0]]), T=np.array([[3.0]]))
    g_prod = column_norm_products(*(getattr(f, n) for n in "URVT"))
    assert g_prod == pytest.approx(6.0)
    rep = verify_temporal_balance(f, "dura1")
    assert rep.passed
    # after rescaling the global sum collapses to 4 * sqrt(|R||T|) * product
    from kgedura.theory import _temporal_rescale

    g = _temporal_rescale(f, "dura1")
    assert temporal_dura1_sum(g) == pytest.approx(24.0)
    assert column_norm_products(g.U, g.R, g.V, g.T) == pytest.approx(6.0)


@pytest.mark.parametrize("variant", ["dura1", "dura2"])
def test_temporal_balance_random_instances(variant):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rep = verify_temporal_balance(_random_quad(rng), variant)
        assert rep.passed, rep
        assert rep.reconstruction_max_abs_diff <= 1e-9
        assert rep.balance_max_rel_dev <= 1e-9
        assert rep.sum_identity_rel_dev <= 1e-9
        assert rep.sum_nonincreasing


def test_temporal_fixed_points():
    from kgedura.theory import _temporal_rescale

    rng = np.random.default_rng(3)
    for variant in ("dura1", "dura2"):
        g = _temporal_rescale(_random_quad(rng), variant)
        h = _temporal_rescale(g, variant)
        for name in "URVT":
            assert np.max(np.abs(getattr(g, name) - getattr(h, name))) <= 1e-9


def test_run_verification_all_pass():
    results = run_verification(seeds=20)
    names = {r.name for r in results}
    assert {"static-balance", "temporal-balance-dura1",
            "temporal-balance-dura2", "rank1-nuclear-equality",
            "am-gm-lower-bound", "dual-expansion"} <= names
    for r in results:
        assert r.passed, r.format_line()
        assert "PASS" in r.format_line()
