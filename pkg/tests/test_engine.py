import numpy as np
import pytest

from semidec.engine import (
    TRACE_COLUMNS,
    SimConfig,
    error_ratios,
    message_cost,
    read_trace_csv,
    run,
    server_round_schedule,
    trace_filename,
    write_trace_csv,
)
from semidec.errors import DimensionMismatch, InvalidConfig, InvalidK, NonFiniteState
from semidec.objectives import HeterogeneityConfig, make_logistic, make_quadratic
from semidec.topology import build_topology, metropolis_weights


def quad(sizes, kind="ring", inter=1.0, intra=0.5, noise=0.5, seed=0, d=4):
    t = build_topology(kind, sizes, seed=seed)
    return t, make_quadratic(d, t, HeterogeneityConfig(intra, inter), seed=seed, noise_std=noise)


class TestSchedule:
    @pytest.mark.parametrize("T, H, rounds", [(10, 5, [0, 5]), (3, 1, [0, 1, 2]), (5, 7, [0])])
    def test_examples(self, T, H, rounds):
        assert server_round_schedule(T, H) == rounds

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            server_round_schedule(0, 1)


class TestConfig:
    def test_K_range(self):
        with pytest.raises(InvalidK):
            SimConfig((3, 3), K=7)

    @pytest.mark.parametrize("field, value", [("H", 0), ("T", 0), ("eta", -1.0), ("trace_every", 0)])
    def test_invalid_fields(self, field, value):
        with pytest.raises(InvalidConfig):
            SimConfig((3, 3), K=2, **{field: value})

    def test_dimension_mismatch(self):
        t, obj = quad([4, 4])
        with pytest.raises(DimensionMismatch):
            run(SimConfig((4, 5), K=2), obj)


class TestRun:
    def test_full_sampling_primitives_identical(self):
        t, obj = quad([6, 6])
        a = run(SimConfig((6, 6), "ring", "S2S", K=12, H=3, T=40, eta=0.1, seed=4), obj, t)
        b = run(SimConfig((6, 6), "ring", "S2A", K=12, H=3, T=40, eta=0.1, seed=4), obj, t)
        assert a.records == b.records
        assert np.array_equal(a.final, b.final)

    def test_zero_stepsize_is_static(self):
        t, obj = quad([5, 5])
        x0 = tuple(np.arange(4.0))
        for prim in ("S2S", "S2A"):
            tr = run(SimConfig((5, 5), "ring", prim, K=3, H=2, T=20, eta=0.0, x0=x0), obj, t)
            assert np.array_equal(tr.final, np.repeat(np.array(x0)[:, None], 10, axis=1))
            assert all(r.bias_sq == 0 and r.disagreement_sq == 0 for r in tr.records)

    def test_centralized_limit(self):
        t, obj = quad([8], kind="complete", noise=0.0)
        eta, T = 0.3, 50
        x0 = tuple(np.full(4, 2.0))
        tr = run(SimConfig((8,), "complete", "S2S", K=8, H=1, T=T, eta=eta, x0=x0), obj, t)
        x = np.array(x0)
        for rec, xbar in zip(tr.records, tr.xbar):
            x = x - eta * obj.full_grad(x)
            np.testing.assert_allclose(xbar, x, atol=1e-10)

    def test_deterministic(self):
        t, obj = quad([5, 7], kind="random_regular", seed=2)
        cfg = SimConfig((5, 7), "random_regular", "S2A", K=4, H=3, T=30, eta=0.05, seed=3, time_varying=True, degree=2)
        a, b = run(cfg, obj, t), run(cfg, obj, t)
        assert a.records == b.records
        assert np.array_equal(a.final, b.final)

    def test_shared_state_before_first_server_step(self):
        # Same seed gives the same pre-server state; the primitives only differ afterwards.
        t, obj = quad([6, 6])
        a = run(SimConfig((6, 6), "ring", "S2S", K=3, H=10, T=10, eta=0.1, seed=1, x0=(1.0,) * 4), obj, t)
        b = run(SimConfig((6, 6), "ring", "S2A", K=3, H=10, T=10, eta=0.1, seed=1, x0=(1.0,) * 4), obj, t)
        assert a.records[0].pre_disagreement_sq == b.records[0].pre_disagreement_sq
        assert a.records[1:] != b.records[1:]

    def test_s2s_bias_zero(self):
        t, obj = quad([10, 10])
        tr = run(SimConfig((10, 10), "ring", "S2S", K=5, H=4, T=60, eta=0.1), obj, t)
        assert max(r.bias_sq for r in tr.server_records()) <= 1e-18

    def test_s2a_disagreement_zero_after_server(self):
        t, obj = quad([10, 10])
        tr = run(SimConfig((10, 10), "ring", "S2A", K=5, H=4, T=60, eta=0.1), obj, t)
        assert max(r.disagreement_sq for r in tr.server_records()) <= 1e-18

    def test_mixing_preserves_average(self):
        t, _ = quad([6, 6])
        rng = np.random.default_rng(0)
        X = rng.standard_normal((3, 12))
        W = metropolis_weights(t)
        for _ in range(20):
            Y = W.mix(X)
            np.testing.assert_allclose(Y.mean(axis=1), X.mean(axis=1), atol=1e-12)
            X = Y

    @pytest.mark.parametrize("prim", ["S2S", "S2A"])
    def test_decomposition_holds(self, prim):
        t, obj = quad([7, 9], inter=2.0)
        tr = run(SimConfig((7, 9), "ring", prim, K=4, H=3, T=40, eta=0.1), obj, t)
        for r in tr.records:
            assert r.intra_sq + r.inter_sq == pytest.approx(r.disagreement_sq, rel=1e-10, abs=1e-30)

    def test_trace_spacing(self):
        t, obj = quad([5, 5])
        tr = run(SimConfig((5, 5), "ring", "S2S", K=2, H=7, T=30, trace_every=4), obj, t)
        rounds = [r.round for r in tr.records]
        expected = sorted(set(range(0, 30, 4)) | set(range(0, 30, 7)) | {29})
        assert rounds == expected

    def test_divergence(self):
        t, obj = quad([5, 5])
        with pytest.raises(NonFiniteState) as info:
            run(SimConfig((5, 5), "ring", "S2S", K=2, H=2, T=5000, eta=5.0, x0=(1.0,) * 4), obj, t)
        assert info.value.round > 0

    def test_logistic_runs(self):
        t = build_topology("complete", [4, 4])
        obj = make_logistic(3, 4, 10, t, HeterogeneityConfig(disjoint_classes=True), seed=0)
        tr = run(SimConfig((4, 4), "complete", "S2A", K=4, H=2, T=20, eta=0.1), obj, t)
        assert tr.records[-1].f_gap < tr.records[0].f_gap

    def test_inter_bias_spikes(self):
        t, obj = quad([10, 10], inter=5.0, intra=0.0, noise=1.0, d=10)
        tr = run(SimConfig((10, 10), "ring", "S2A", K=4, H=5, T=200, eta=0.1), obj, t)
        server = np.array([r.bias_sq for r in tr.records if r.is_server])
        other = np.array([r.bias_sq for r in tr.records if not r.is_server])
        assert np.all(server > 1e-12)
        assert np.all(server >= 10 * np.median(other))


class TestMessages:
    @pytest.mark.parametrize("prim, down", [("S2S", 400), ("S2A", 2000)])
    def test_counts(self, prim, down):
        t = build_topology("complete", [50, 50])
        obj = make_quadratic(2, t, seed=0)
        tr = run(SimConfig((50, 50), "complete", prim, K=20, H=5, T=100, eta=0.1, trace_every=100), obj, t)
        assert tr.server_rounds == 20
        assert message_cost(tr) == (400, down)

    def test_full_sampling_equal_cost(self):
        t, obj = quad([3, 3])
        a = run(SimConfig((3, 3), "ring", "S2S", K=6, H=2, T=9), obj, t)
        b = run(SimConfig((3, 3), "ring", "S2A", K=6, H=2, T=9), obj, t)
        assert message_cost(a) == message_cost(b)

    def test_ratios_helper(self):
        t, obj = quad([10, 10])
        tr = run(SimConfig((10, 10), "ring", "S2S", K=5, H=2, T=20), obj, t)
        r = error_ratios(tr)
        assert np.all(r["bias_ratio"] <= 1e-16)
        assert np.all((r["disagreement_ratio"] >= 0) & (r["disagreement_ratio"] <= 1 + 1e-12))


class TestCsv:
    def test_round_trip(self, tmp_path):
        t, obj = quad([5, 5])
        cfg = SimConfig((5, 5), "ring", "S2A", K=3, H=2, T=10, seed=9)
        tr = run(cfg, obj, t)
        path = write_trace_csv(tr, tmp_path)
        assert path.name == "S2A_K3_H2_ring_seed9.csv" == trace_filename(cfg)
        assert path.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
        rows = read_trace_csv(path)
        assert len(rows) == len(tr.records)
        for row, rec in zip(rows, tr.records):
            assert row["f_gap"] == rec.f_gap
            assert row["bias_sq"] == rec.bias_sq
            assert row["uplinks"] == rec.uplinks

    def test_byte_identical(self, tmp_path):
        t, obj = quad([5, 5])
        cfg = SimConfig((5, 5), "ring", "S2S", K=3, H=2, T=10)
        a = write_trace_csv(run(cfg, obj, t), tmp_path / "a").read_bytes()
        b = write_trace_csv(run(cfg, obj, t), tmp_path / "b").read_bytes()
        assert a == b
