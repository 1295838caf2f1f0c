import json

import numpy as np
import pytest

from enlarged.errors import ConfigError, DataError
from enlarged.harness import (
    ExperimentSpec,
    contaminate_csv,
    gen_density_synth,
    gen_reg_synth,
    gen_reg_toy,
    load_csv,
    parse_config,
    run_experiment,
    write_csv,
)
from enlarged.regression import RegData


class TestGenerators:
    def test_density_clean(self):
        X, plant = gen_density_synth(0, 30, 0.0)
        assert plant.size == 0 and X.points.shape == (30, 2)

    def test_density_plant_size(self):
        sizes = [gen_density_synth(s, 50, 0.2)[1].size for s in range(1000)]
        assert 9 <= np.mean(sizes) <= 11

    def test_density_bernoulli_option(self):
        sizes = [gen_density_synth(s, 50, 0.2, selection="bernoulli")[1].size for s in range(1000)]
        assert 9 <= np.mean(sizes) <= 11 and np.std(sizes) > 1

    def test_density_planted_far(self):
        # ||x||^2 / 100 is noncentral chi-square(2, nc=2); P(||x|| > 5) = 0.955, not 0.99
        from scipy.stats import ncx2

        far = []
        for s in range(300):
            X, plant = gen_density_synth(s, 50, 0.2)
            far.extend(np.linalg.norm(X.points[plant], axis=1) > 5)
        p = ncx2(2, 2).sf(0.25)
        assert abs(np.mean(far) - p) < 3 * np.sqrt(p * (1 - p) / len(far))

    def test_toy(self):
        d, plant = gen_reg_toy(1, 50, 0.0)
        assert plant.size == 0
        d, plant = gen_reg_toy(1, 2000, 0.3)
        assert np.all(d.y[plant] >= 0)
        assert abs(plant.size / 2000 - 0.3) < 0.04

    def test_toy_clean_is_linear(self):
        d, _ = gen_reg_toy(2, 5000, 0.0)
        coef = np.linalg.lstsq(d.design, d.y, rcond=None)[0]
        np.testing.assert_allclose(coef, [10.0, 1.0], atol=0.1)

    def test_synth_outliers_large(self):
        # outlier y ~ N(0, 10^8): P(|y| > 10^3) = P(|z| > 0.1) = 0.920
        from scipy.stats import norm

        big = []
        for s in range(200):
            tr, _, plant, _ = gen_reg_synth(s, 100, 5, 0.4, "y_only")
            big.extend(np.abs(tr.y[plant]) > 1e3)
        p = 2 * norm.sf(0.1)
        assert abs(np.mean(big) - p) < 3 * np.sqrt(p * (1 - p) / len(big))
        assert np.std(tr.y[plant]) > 5e3

    def test_synth_xy_mode(self):
        tr, te, plant, truth = gen_reg_synth(5, 200, 3, 0.3, "xy", n_test=50)
        clean = np.setdiff1d(np.arange(200), plant)
        assert np.all((tr.x[clean] >= 0) & (tr.x[clean] <= 1))
        assert np.mean(np.abs(tr.x[plant]) > 1) > 0.9
        assert te.n == 50 and truth.intercept == 0.0

    def test_synth_fresh_theta_and_clean_test(self):
        _, te1, _, t1 = gen_reg_synth(1, 100, 5, 0.4, "y_only")
        _, te2, _, t2 = gen_reg_synth(2, 100, 5, 0.4, "y_only")
        assert not np.allclose(t1.beta, t2.beta)
        resid = te1.y - te1.x @ t1.beta
        assert np.all((te1.x >= 0) & (te1.x <= 1)) and np.std(resid) < 0.6

    def test_synth_deterministic(self):
        a = gen_reg_synth(9, 100, 5, 0.2, "xy")
        b = gen_reg_synth(9, 100, 5, 0.2, "xy")
        np.testing.assert_array_equal(a[0].y, b[0].y)
        np.testing.assert_array_equal(a[2], b[2])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            gen_reg_synth(0, 10, 2, 0.1, "x_only")


class TestContaminateCsv:
    def data(self):
        rng = np.random.default_rng(0)
        return RegData(rng.standard_normal((500, 3)), rng.standard_normal(500))

    def test_identity_at_zero(self):
        d = self.data()
        out, plant = contaminate_csv(d, 1, 0.0)
        assert plant.size == 0
        np.testing.assert_array_equal(out.x, d.x)
        np.testing.assert_array_equal(out.y, d.y)

    @pytest.mark.parametrize("ratio", [0.05, 0.2, 0.4])
    def test_exact_scaling(self, ratio):
        d = self.data()
        out, plant = contaminate_csv(d, 3, ratio, "xy")
        assert np.all(out.y[plant] == 1e4 * d.y[plant])
        assert np.all(out.x[plant] == 1e2 * d.x[plant])
        rest = np.setdiff1d(np.arange(d.n), plant)
        np.testing.assert_array_equal(out.y[rest], d.y[rest])
        assert abs(plant.size / d.n - ratio) < 0.07

    def test_y_only_leaves_x(self):
        d = self.data()
        out, _ = contaminate_csv(d, 3, 0.2, "y_only")
        np.testing.assert_array_equal(out.x, d.x)


class TestCsv:
    def test_roundtrip_and_target(self, tmp_path):
        p = tmp_path / "d.csv"
        x = np.arange(12.0).reshape(6, 2)
        write_csv(p, x, np.arange(6.0))
        d, meta = load_csv(p)
        np.testing.assert_array_equal(d.x, x)
        assert meta["target"] == "y" and meta["dropped_rows"] == 0
        d2, meta2 = load_csv(p, "x1")
        np.testing.assert_array_equal(d2.y, x[:, 0])

    def test_dropped_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n3,\nfoo,4\n5,6\n7,8\n9,10\n")
        d, meta = load_csv(p)
        assert d.n == 4 and meta["dropped_rows"] == 2

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv")
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(DataError):
            load_csv(p, "zzz")


class TestSpec:
    def test_parse(self):
        spec = parse_config(
            """
            # Table 1 setup 1
            task = regression
            generator = reg_synth_y
            contamination = 0.2
            gammas = 0.1, 0.5
            methods = L2, S_power
            replications = 3
            seed = 42
            """
        )
        assert spec.gammas == [0.1, 0.5] and spec.methods == ["L2", "S_power"] and spec.seed == 42

    @pytest.mark.parametrize(
        "text",
        [
            "bogus = 1",
            "replications = 0",
            "contamination = 0.5",
            "replications = many",
            "task = density",
            "methods = L2, MLE",
            "gammas = 0.1, -1",
            "generator = csv_bench_y",
            "no equals sign",
            "seed = 1\nseed = 2",
        ],
    )
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestRun:
    def small(self, **kw):
        base = dict(generator="reg_synth_y", contamination=0.2, replications=2, seed=5,
                    methods=["L2", "LTS", "S_power"], gammas=[0.1, 0.5])
        base.update(kw)
        return ExperimentSpec(**base)

    def test_byte_identical(self):
        spec = self.small(replications=1)
        a, b = run_experiment(spec), run_experiment(spec)
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()

    def test_rows_and_columns(self):
        t = run_experiment(self.small())
        header = t.to_csv().splitlines()[0].split(",")
        assert header == ["method", "gamma", "contamination", "rmse_mean", "rmse_std", "ratio_mean",
                          "ratio_std", "precision", "recall", "failures", "replications"]
        assert [(r["method"], r["gamma"]) for r in t.rows] == [("L2", None), ("LTS", None),
                                                              ("S_power", 0.1), ("S_power", 0.5)]
        for r in t.rows:
            assert r["rmse_std"] >= 0 and r["replications"] == 2
        sp = t.row("S_power", 0.1)
        assert 0 <= sp["precision"] <= 1 and 0 <= sp["recall"] <= 1
        meta = json.loads(t.to_json())["metadata"]
        assert meta["defaults"]["huber_k"] == 1.345 and meta["spec"]["seed"] == 5

    def test_adding_method_keeps_others(self):
        a = run_experiment(self.small(methods=["S_power"], gammas=[0.1]))
        b = run_experiment(self.small(methods=["L2", "GemMc", "S_power"], gammas=[0.1]))
        assert a.row("S_power", 0.1) == b.row("S_power", 0.1)

    def test_density_task(self):
        spec = ExperimentSpec(task="density", generator="density_synth", n_train=50, d=2, contamination=0.2,
                              methods=["S_power", "MLE"], gammas=[0.1], replications=3)
        t = run_experiment(spec)
        assert t.row("MLE")["rmse_mean"] > t.row("S_power", 0.1)["rmse_mean"]
        assert 0.1 < t.row("S_power", 0.1)["ratio_mean"] < 0.3

    def test_failures_counted(self):
        # n_train = d + 2 makes the LTS trim infeasible at this ratio
        spec = self.small(n_train=7, methods=["LTS", "L2"], contamination=0.45, replications=2)
        t = run_experiment(spec)
        assert t.row("LTS")["failures"] == 2 and t.row("L2")["failures"] == 0

    def test_test_set_never_contaminated(self, monkeypatch):
        """Construction audit: the fitted data never include the test rows."""
        import enlarged.harness as h

        seen = []
        orig = h._run_cell

        def spy(spec, method, gamma, data, test, plant, ss):
            seen.append((data, test))
            return orig(spec, method, gamma, data, test, plant, ss)

        monkeypatch.setattr(h, "_run_cell", spy)
        run_experiment(self.small(generator="reg_synth_xy", contamination=0.4, methods=["L2"]))
        for data, test in seen:
            assert np.all(np.abs(test.y) < 50) and np.all((test.x >= 0) & (test.x <= 1))
            assert not np.shares_memory(data.y, test.y)

    def test_csv_bench(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((300, 3)) * [1.0, 10.0, 100.0] + 5
        y = x @ [1.0, 0.1, 0.01] + rng.normal(0, 0.5, 300)
        p = tmp_path / "bench.csv"
        write_csv(p, x, y)
        spec = ExperimentSpec(generator="csv_bench_y", csv_path=str(p), n_train=100, n_test=100, d=3,
                              contamination=0.2, methods=["L2", "S_power"], replications=2)
        t = run_experiment(spec)
        assert t.row("S_power", 0.1)["rmse_mean"] < 1.0 < t.row("L2")["rmse_mean"]
        assert json.loads(t.to_json())["metadata"]["csv"]["rows"] == 300

    def test_csv_too_small(self, tmp_path):
        p = tmp_path / "b.csv"
        write_csv(p, np.random.default_rng(0).random((20, 2)), np.arange(20.0))
        spec = ExperimentSpec(generator="csv_bench_y", csv_path=str(p), n_train=15, n_test=10, d=2)
        with pytest.raises(DataError):
            run_experiment(spec)
