"""Generator tests: motif recomputation oracles, Lorenz-96 dynamics,
network-export loading, and on-disk layout."""

import json

import numpy as np
import pytest

from causalgrad.data import DataError
from causalgrad.synthetic import (
    EDGE_FUNCTIONS,
    GroundTruth,
    Lorenz96Config,
    MotifConfig,
    MOTIF_EDGES,
    gen_motif,
    load_generated,
    load_netsim,
    load_truth,
    lorenz96_deriv,
    save_generated,
    save_truth,
    simulate_lorenz96,
)


def test_truth_round_trip(tmp_path):
    t = GroundTruth(edges=frozenset({("X1", "X2"), ("X2", "X3")}),
                    lags={("X1", "X2"): 3, ("X2", "X3"): 1})
    save_truth(t, tmp_path / "truth.json")
    back = load_truth(tmp_path / "truth.json")
    assert back.edges == t.edges and back.lags == t.lags


def test_truth_validates_lags():
    with pytest.raises(DataError):
        GroundTruth(edges=frozenset({("a", "b")}), lags={("a", "c"): 1})
    with pytest.raises(DataError):
        GroundTruth(edges=frozenset({("a", "b")}), lags={("a", "b"): 0})


# ---------------------------------------------------------------------------
# Motifs
# ---------------------------------------------------------------------------


def test_motif_shapes_and_edge_sets():
    ds, truth = gen_motif(MotifConfig("fork", seed=1))
    assert len(ds.specs) == 3 and ds.length == 1000
    assert truth.edges == {("X1", "X2"), ("X1", "X3")}
    causes = {c for c, _ in truth.edges}
    assert causes == {"X1"}  # two edges sharing one cause

    ds, truth = gen_motif(MotifConfig("diamond", seed=1))
    assert len(ds.specs) == 4 and len(truth.edges) == 4
    # two directed paths from the single root to the single sink
    assert truth.edges == {("X1", "X2"), ("X1", "X3"), ("X2", "X4"), ("X3", "X4")}

    assert gen_motif(MotifConfig("v-structure", seed=0))[1].edges == {
        ("X1", "X3"), ("X2", "X3")}
    assert gen_motif(MotifConfig("mediator", seed=0))[1].edges == {
        ("X1", "X2"), ("X2", "X3"), ("X1", "X3")}


def test_motif_noiseless_linear_is_shifted_parent_sum():
    cfg = MotifConfig("mediator", seed=5, length=50, noise_std=0.0,
                      lag_range=(1, 1), coef_range=(1.0, 1.0),
                      functions=("linear",), random_sign=False)
    ds, truth = gen_motif(cfg)
    x1, x2, x3 = ds.series["X1"], ds.series["X2"], ds.series["X3"]
    np.testing.assert_array_equal(x2[1:], x1[:-1])
    np.testing.assert_array_equal(x2[:1], 0.0)
    np.testing.assert_array_equal(x3[1:], x2[:-1] + x1[:-1])
    assert truth.lags == {e: 1 for e in truth.edges}


@pytest.mark.parametrize("kind", sorted(MOTIF_EDGES))
def test_motif_recomputation_oracle(kind):
    # regenerate every child series directly from the sampled realization
    cfg = MotifConfig(kind, seed=77, length=300)
    ds, truth, details = gen_motif(cfg, return_details=True)
    for j in range(1, len(ds.specs) + 1):
        name = f"X{j}"
        incoming = [e for e in details if e["effect"] == name]
        if not incoming:
            continue
        expected = ds.series[name].copy()
        for e in incoming:
            f = EDGE_FUNCTIONS[e["function"]]
            contrib = np.zeros(cfg.length)
            contrib[e["lag"]:] = e["coefficient"] * f(ds.series[e["cause"]][:-e["lag"]])
            expected -= contrib
        # what remains must be the child's own noise
        assert np.abs(expected).max() < 6 * cfg.noise_std
    assert truth.lags == {(e["cause"], e["effect"]): e["lag"] for e in details}


def test_motif_reproducible_bit_exact():
    a, _ = gen_motif(MotifConfig("diamond", seed=123))
    b, _ = gen_motif(MotifConfig("diamond", seed=123))
    for name in a.series:
        assert a.series[name].tobytes() == b.series[name].tobytes()
    c, _ = gen_motif(MotifConfig("diamond", seed=124))
    assert any(a.series[n].tobytes() != c.series[n].tobytes() for n in a.series)


def test_motif_sampled_ranges_respected():
    for seed in range(20):
        _, truth, details = gen_motif(
            MotifConfig("diamond", seed=seed, length=64, lag_range=(2, 3),
                        coef_range=(0.5, 0.75)), return_details=True)
        for e in details:
            assert 2 <= e["lag"] <= 3
            assert 0.5 <= abs(e["coefficient"]) <= 0.75
            assert e["function"] in EDGE_FUNCTIONS
    assert all(2 <= lag <= 3 for lag in truth.lags.values())


def test_motif_no_self_edges():
    for kind in MOTIF_EDGES:
        _, truth = gen_motif(MotifConfig(kind, seed=3, length=40))
        assert all(c != e for c, e in truth.edges)


def test_motif_config_validation():
    with pytest.raises(DataError):
        MotifConfig("pentagon")
    with pytest.raises(DataError):
        MotifConfig("fork", length=6, lag_range=(1, 4))
    with pytest.raises(DataError):
        MotifConfig("fork", functions=("cubic",))
    with pytest.raises(DataError):
        MotifConfig("fork", lag_range=(0, 2))


# ---------------------------------------------------------------------------
# Lorenz-96
# ---------------------------------------------------------------------------


def test_lorenz_derivative_hand_oracle():
    deriv = lorenz96_deriv(np.array([1.0, 2.0, 3.0, 4.0, 5.0]), forcing=8.0)
    # first component: (x2 - x4) * x5 - x1 + F = (2 - 4) * 5 - 1 + 8
    assert deriv[0] == -3.0


def test_lorenz_fixed_point():
    x = np.full(10, 8.0)
    np.testing.assert_array_equal(lorenz96_deriv(x, forcing=8.0), np.zeros(10))


def test_lorenz_shapes_truth_and_self_loops():
    ds, truth = simulate_lorenz96(Lorenz96Config(n_vars=10, forcing=30.0,
                                                 steps=1000, seed=0))
    assert len(ds.specs) == 10 and ds.length == 1000
    assert len(truth.edges) == 40
    for i in range(1, 11):
        assert (f"X{i}", f"X{i}") in truth.edges  # damping self-loop
    assert set(truth.lags.values()) == {1}
    # cyclic neighbors of X1 are X9 (i-2), X10 (i-1), X2 (i+1)
    incoming = {c for c, e in truth.edges if e == "X1"}
    assert incoming == {"X9", "X10", "X2", "X1"}


@pytest.mark.parametrize("forcing", [30.0, 40.0])
def test_lorenz_bounded_in_chaotic_regime(forcing):
    ds, _ = simulate_lorenz96(Lorenz96Config(forcing=forcing, steps=1000, seed=2))
    peak = max(np.abs(v).max() for v in ds.series.values())
    assert peak < 1e3
    # and genuinely chaotic, not collapsed to the fixed point
    assert min(v.std() for v in ds.series.values()) > 1.0


def test_lorenz_blow_up_aborts():
    with pytest.raises(FloatingPointError):
        simulate_lorenz96(Lorenz96Config(forcing=40.0, dt=0.6, steps=200, seed=0))


def test_lorenz_reproducible_and_forcing_drawn_from_range():
    a, _ = simulate_lorenz96(Lorenz96Config(seed=9, steps=50))
    b, _ = simulate_lorenz96(Lorenz96Config(seed=9, steps=50))
    for name in a.series:
        assert a.series[name].tobytes() == b.series[name].tobytes()


def test_lorenz_config_validation():
    with pytest.raises(DataError):
        Lorenz96Config(n_vars=3)
    with pytest.raises(DataError):
        Lorenz96Config(dt=0.0)


# ---------------------------------------------------------------------------
# Network-simulation exports
# ---------------------------------------------------------------------------


def _write_netsim(path, nodes=5, edges=((0, 1), (1, 2), (0, 3)), subjects=2,
                  timepoints=200):
    path.mkdir(parents=True, exist_ok=True)
    (path / "network.json").write_text(json.dumps(
        {"nodes": nodes, "edges": [list(e) for e in edges]}))
    rng = np.random.default_rng(0)
    for k in range(1, subjects + 1):
        mat = rng.normal(size=(timepoints, nodes))
        lines = [",".join(repr(float(v)) for v in row) for row in mat]
        (path / f"subject_{k}.csv").write_text("\n".join(lines) + "\n")


def test_netsim_fixture_round_trip(tmp_path):
    _write_netsim(tmp_path / "net")
    subjects = load_netsim(tmp_path / "net")
    assert len(subjects) == 2
    ds, truth = subjects[0]
    assert len(ds.specs) == 5 and ds.length == 200
    assert truth.edges == {("N1", "N2"), ("N2", "N3"), ("N1", "N4")}
    assert all(lag == 1 for lag in truth.lags.values())


def test_netsim_empty_adjacency(tmp_path):
    _write_netsim(tmp_path / "net", edges=())
    _, truth = load_netsim(tmp_path / "net")[0]
    assert truth.edges == frozenset()


def test_netsim_unusual_node_count_warns(tmp_path):
    _write_netsim(tmp_path / "net", nodes=7, edges=((0, 1),))
    with pytest.warns(RuntimeWarning):
        load_netsim(tmp_path / "net")


def test_netsim_column_mismatch_raises(tmp_path):
    _write_netsim(tmp_path / "net")
    bad = (tmp_path / "net" / "subject_1.csv").read_text().splitlines()
    (tmp_path / "net" / "subject_1.csv").write_text(
        "\n".join(line.rsplit(",", 1)[0] for line in bad) + "\n")
    with pytest.raises(DataError):
        load_netsim(tmp_path / "net")


def test_netsim_malformed_network_raises(tmp_path):
    (tmp_path / "net").mkdir()
    (tmp_path / "net" / "network.json").write_text('{"nodes": "x"}')
    with pytest.raises(DataError):
        load_netsim(tmp_path / "net")


def test_save_generated_layout(tmp_path):
    cfg = MotifConfig("fork", seed=4, length=60)
    ds, truth, details = gen_motif(cfg, return_details=True)
    save_generated(ds, truth, tmp_path / "out",
                   manifest={"config": cfg.to_json(), "edges": details})
    back_ds, back_truth = load_generated(tmp_path / "out")
    assert back_truth.edges == truth.edges and back_truth.lags == truth.lags
    for name in ds.series:
        assert back_ds.series[name].tobytes() == ds.series[name].tobytes()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["config"]["kind"] == "fork"
