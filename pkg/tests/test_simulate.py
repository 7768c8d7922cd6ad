import numpy as np
import pytest

from nodediscovery.network import Mobility, Network, gamma_from_topology, generate_er
from nodediscovery.simulate import (
    Dataset,
    EpidemicState,
    Scenario,
    SimulationError,
    TransmissionParams,
    advance_state,
    draw_scenario,
    synthesize_dataset,
)


class ZeroNoise:
    """Stand-in random stream whose draws are all zero."""

    def standard_normal(self, size=None):
        return np.zeros(size)


def test_params_validation():
    with pytest.raises(ValueError):
        TransmissionParams(0.0, 0.1)
    assert TransmissionParams(0.089, 0.011).r == pytest.approx(0.089 / 0.011)


def test_absorbing_state(params, rng):
    st = EpidemicState.initial(np.full(3, 1e6), np.zeros(3))
    mob = Mobility(np.array([[0, 0.1, 0], [0.1, 0, 0], [0, 0, 0]]))
    nxt = advance_state(st, params, mob, 0.1, rng)
    assert np.array_equal(nxt.i, st.i) and np.array_equal(nxt.s, st.s)
    assert nxt.t == pytest.approx(0.1)


def test_noise_free_conservation(params):
    net = generate_er(6, 2.0, seed=1)
    mob = gamma_from_topology(net, 0.2)
    st = EpidemicState.initial(np.full(6, 1e6), np.array([500.0, 0, 0, 0, 0, 0]))
    total = st.total()
    for _ in range(2000):
        st = advance_state(st, params, mob, 0.1, ZeroNoise())
    assert abs(st.total() - total) / total < 1e-9
    assert st.i.sum() > 500


def test_linearized_matches_full_when_few_infected(params):
    mob = Mobility(np.zeros((1, 1)))
    st = EpidemicState.initial(np.array([1e6]), np.array([500.0]))
    full = advance_state(st, params, mob, 0.1, ZeroNoise(), mode="full")
    lin = advance_state(st, params, mob, 0.1, ZeroNoise(), mode="linearized")
    d_full, d_lin = full.i - st.i, lin.i - st.i
    assert abs(d_full - d_lin) / abs(d_lin) < 0.01


def test_unknown_mode(params, rng):
    st = EpidemicState.initial(np.array([10.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        advance_state(st, params, Mobility(np.zeros((1, 1))), 0.1, rng, mode="exact")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_raises(params, rng):
    st = EpidemicState.initial(np.array([np.inf]), np.array([1.0]))
    with pytest.raises(SimulationError):
        advance_state(st, params, Mobility(np.zeros((1, 1))), 0.1, rng)


def test_clamping_counts(rng):
    params = TransmissionParams(0.5, 5.0)
    st = EpidemicState.initial(np.full(4, 1e3), np.full(4, 0.5))
    mob = Mobility(np.zeros((4, 4)))
    for _ in range(50):
        st = advance_state(st, params, mob, 0.5, rng)
    assert st.clamped > 0
    assert np.all(st.i >= 0) and np.all(st.s >= 0) and np.all(st.r >= 0)


def test_paired_migration_conserves_travellers(rng):
    # without infection or recovery, paired noise moves persons without creating them
    params = TransmissionParams(1e-12, 1e-12)
    net = generate_er(5, 2.0, seed=4)
    mob = gamma_from_topology(net, 0.3)
    st = EpidemicState.initial(np.full(5, 1e6), np.full(5, 1e4))
    total_i = st.i.sum()
    for _ in range(20):
        st = advance_state(st, params, mob, 0.05, rng, mode="linearized")
    assert st.i.sum() == pytest.approx(total_i, rel=1e-8)


def test_single_node_one_step_ensemble(params):
    n = 100_000
    rng = np.random.default_rng(2024)
    mob = Mobility(np.zeros((1, 1)))
    st = EpidemicState.initial(np.array([1e6]), np.array([100.0]))
    i_next = np.empty(n)
    dj = np.empty(n)
    for k in range(n):
        nxt = advance_state(st, params, mob, 0.01, rng, mode="linearized")
        i_next[k] = nxt.i[0]
        dj[k] = nxt.j[0] - st.j[0]
    mean_exp = 100 * (1 + (params.alpha - params.beta) * 0.01)
    var_exp = (params.alpha + params.beta) * 100 * 0.01
    assert abs(i_next.mean() - mean_exp) < 3 * np.sqrt(var_exp / n)
    assert abs(i_next.var(ddof=1) - var_exp) < 3 * var_exp * np.sqrt(2 / (n - 1))
    dj_exp = params.alpha * 100 * 0.01
    assert abs(dj.mean() - dj_exp) < 3 * np.sqrt(dj_exp / n)


def test_scenario_constructors():
    sc = Scenario.index([1, 0, 1])
    assert sc.seed_node == 3
    assert sc.ground_truth(3).tolist() == [True, False, True]
    assert not Scenario.absent().ground_truth(4).any()
    with pytest.raises(ValueError):
        Scenario("absent", np.array([1, 0]))
    with pytest.raises(ValueError):
        Scenario("index", None)
    full = Scenario.intermediate([0, 1]).full_network(Network(np.array([[0, 1], [1, 0]])))
    assert full.n_nodes == 3 and full.adjacency[1, 2] == 1


def test_synthesis_deterministic(params):
    net, sc = draw_scenario("index", 6, 2.0, seed=9)
    a = synthesize_dataset(net, params, 0.1, sc, 20, seed=5)
    b = synthesize_dataset(net, params, 0.1, sc, 20, seed=5)
    assert np.array_equal(a.i_series.values, b.i_series.values)
    assert np.array_equal(a.dj_series.values, b.dj_series.values)
    assert a.i_series.values.shape == (20, 6)
    assert np.all(a.dj_series.values >= 0)
    assert np.array_equal(a.i_series.ground_truth, sc.ground_truth(6))


def test_index_scenario_starts_at_zero(params):
    net, sc = draw_scenario("index", 8, 2.0, seed=1)
    syn = synthesize_dataset(net, params, 0.1, sc, 10, seed=2)
    assert np.all(syn.i_series.values[0] == 0)
    assert syn.full_network.n_nodes == 9


def test_absent_scenario_uses_observed_network(params):
    net, sc = draw_scenario("absent", 5, 2.0, seed=1)
    syn = synthesize_dataset(net, params, 0.1, sc, 10, seed=2)
    assert syn.full_network is net
    assert syn.i_series.values[0, 0] == 200


def test_dataset_csv_roundtrip(tmp_path, params):
    net, sc = draw_scenario("absent", 4, 2.0, seed=0)
    ds = synthesize_dataset(net, params, 0.1, sc, 8, delta_t=0.5, seed=1).i_series
    ds.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.values, ds.values)
    assert back.delta_t == 0.5
    assert back.labels == ds.labels


def test_dataset_csv_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("t,a\n0,1\n1,x\n")
    with pytest.raises(ValueError, match=":3:"):
        Dataset.from_csv(tmp_path / "bad.csv")
    (tmp_path / "hdr.csv").write_text("time,a\n0,1\n")
    with pytest.raises(ValueError):
        Dataset.from_csv(tmp_path / "hdr.csv")


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset("I_series", np.ones((1, 3)), 1.0)
    with pytest.raises(ValueError):
        Dataset("cases", np.ones((3, 3)), 1.0)
    with pytest.raises(ValueError):
        Dataset("I_series", np.array([[1.0, np.nan], [1, 1]]), 1.0)
