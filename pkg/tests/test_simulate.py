import json

import numpy as np
import pytest
from scipy import stats

from pudetm import simulate
from pudetm.errors import ConfigError, NonConvergenceError
from pudetm.simulate import (Cell, ScenarioConfig, generate_pu, parse_config, parse_vector,
                             replicate_seed, run_experiment, sample_mvn, true_theta)


def small_cell(task="estimate", **kw):
    return Cell(ScenarioConfig.sar(150, 0.6, p=2, n_shifted=1, validation_size=200), task, **kw)


class TestSampling:
    def test_mvn_moments(self):
        x = sample_mvn([1.0, -2.0], 100_000, np.random.default_rng(0))
        se = 1.0 / np.sqrt(x.shape[0])
        assert np.all(np.abs(x.mean(axis=0) - [1.0, -2.0]) <= 4 * se)
        assert np.all(np.abs(x.var(axis=0) - 1.0) <= 0.03)
        assert abs(np.corrcoef(x.T)[0, 1]) <= 4 * se

    def test_mvn_deterministic(self):
        a = sample_mvn(np.zeros(3), 10, np.random.default_rng(4))
        b = sample_mvn(np.zeros(3), 10, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)

    def test_positive_count_is_binomial(self):
        cfg = ScenarioConfig.scar(10, 0.75, p=1, m=4000, validation_size=0)
        counts = np.array([simulate._mixture(cfg, 4000, np.random.default_rng(s))[1].sum()
                           for s in range(20)])
        assert np.all(np.abs(counts - 3000) <= 3 * np.sqrt(4000 * 0.75 * 0.25))
        assert len(set(counts.tolist())) > 1

    def test_fixed_count(self):
        cfg = ScenarioConfig.scar(10, 0.3, p=1, m=101, fixed_count=True)
        _, y = simulate._mixture(cfg, 101, np.random.default_rng(0))
        assert y.sum() == 30

    def test_scar_positives_share_the_source_mean(self):
        cfg = ScenarioConfig.scar(10, 0.5, p=2, m=10, validation_size=40000)
        _, val = generate_pu(cfg, np.random.default_rng(2))
        pos = val.x[val.y == 1]
        assert np.all(np.abs(pos.mean(axis=0)) <= 4 / np.sqrt(len(pos)))

    def test_sar_target_mean(self):
        cfg = ScenarioConfig.sar(20, 0.7, p=15, m=40000, validation_size=0)
        ds, _ = generate_pu(cfg, np.random.default_rng(1))
        expect = 0.7 * np.array(cfg.mu_target_pos) + 0.3 * np.array(cfg.mu_target_neg)
        assert np.all(np.abs(ds.target_x.mean(axis=0) - expect) <= 0.03)

    def test_true_theta_is_the_log_density_ratio(self, rng):
        cfg = ScenarioConfig.sar(10, 0.4, p=3, n_shifted=2)
        th = true_theta(cfg)
        x = rng.normal(size=(5, 3))
        src = stats.multivariate_normal(cfg.mu_source, np.eye(3))
        for mu, a, b in ((cfg.mu_target_pos, th.alpha1, th.beta1),
                         (cfg.mu_target_neg, th.alpha2, th.beta2)):
            ref = stats.multivariate_normal(mu, np.eye(3)).logpdf(x) - src.logpdf(x)
            np.testing.assert_allclose(a + x @ b, ref, atol=1e-12)

    def test_scar_has_a_null_first_tilt(self):
        th = true_theta(ScenarioConfig.scar(10, 0.5, p=4))
        assert th.alpha1 == 0.0 and np.all(th.beta1 == 0.0)


class TestScenarioValidation:
    @pytest.mark.parametrize("kw", [dict(pi=0.0), dict(pi=1.0), dict(n=0), dict(p=0),
                                    dict(kind="weird"), dict(mu_target_neg=(1.0, 2.0))])
    def test_rejects(self, kw):
        base = dict(p=3, pi=0.5, n=10)
        base.update(kw)
        with pytest.raises(ConfigError):
            ScenarioConfig(**base)

    def test_scar_cannot_shift_positives(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(p=2, kind="scar", mu_target_pos=(1.0, 0.0))

    def test_cell_normalizes_tasks(self):
        c = small_cell(task="classify+estimate")
        assert c.task == "estimate+classify"
        with pytest.raises(ConfigError):
            small_cell(task="fly")
        with pytest.raises(ConfigError):
            small_cell(model="TETM")


class TestExperiments:
    def test_replicate_seeds_are_distinct_and_stable(self):
        a = replicate_seed(3, 0, 1).generate_state(2)
        b = replicate_seed(3, 0, 1).generate_state(2)
        c = replicate_seed(3, 1, 0).generate_state(2)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_worker_count_does_not_change_results(self):
        cells = [small_cell("estimate+classify"), small_cell("gof", name="g")]
        one = run_experiment(cells, replicates=3, seed=11, workers=1)
        two = run_experiment(cells, replicates=3, seed=11, workers=2)
        assert one.to_json() == two.to_json()
        assert one.to_csv() == two.to_csv()

    def test_metrics(self):
        rep = run_experiment([small_cell("estimate+coverage+classify")], replicates=2, seed=1)
        c = rep.cells[0]
        assert c.n_ok == 2 and c.n_failed == 0
        for key in ("pi_hat_mean", "coverage", "accuracy_median", "l1_distance_median"):
            assert key in c.metrics
        assert 0.0 <= c.metrics["coverage"] <= 1.0

    def test_failures_are_counted(self, monkeypatch):
        def boom(*a, **k):
            raise NonConvergenceError("forced")
        monkeypatch.setattr(simulate, "fit", boom)
        rep = run_experiment([small_cell()], replicates=3, seed=0)
        c = rep.cells[0]
        assert (c.n_ok, c.n_failed) == (0, 3)
        assert "forced" in c.failures[0]
        assert c.metrics == {}

    def test_cell_replicates_override(self):
        rep = run_experiment([small_cell(replicates=1)], replicates=5, seed=0)
        assert rep.cells[0].replicates == 1

    def test_no_cells(self):
        with pytest.raises(ConfigError, match="no cells"):
            run_experiment([], replicates=2)

    def test_report_files(self, tmp_path):
        rep = run_experiment([small_cell()], replicates=1, seed=0)
        cpath, jpath = rep.write(tmp_path / "out" / "r")
        assert cpath.read_text().startswith("name,task,model")
        assert json.loads(jpath.read_text())["master_seed"] == 0


class TestConfig:
    def test_vector_shorthand(self):
        assert parse_vector("ones(2), zeros(1), fill(2, 0.5)") == (1, 1, 0, 0.5, 0.5)
        assert parse_vector([1, 2]) == (1.0, 2.0)
        assert parse_vector(3) == (3.0,)
        with pytest.raises(ConfigError):
            parse_vector("twos(3)")

    def test_expansion(self):
        cfg = parse_config("""
seed = 5
replicates = 7
[defaults]
p = 2
kind = "sar"
[[cells]]
task = "estimate"
n = [100, 200]
pi = [0.3, 0.7]
model = ["DETM", "SETM"]
""")
        assert len(cfg.cells) == 8
        assert (cfg.seed, cfg.replicates) == (5, 7)
        assert {c.scenario.n for c in cfg.cells} == {100, 200}
        assert {c.model for c in cfg.cells} == {"DETM", "SETM"}

    def test_vector_valued_expansion(self):
        cfg = parse_config("""
[[cells]]
task = "estimate"
p = 3
kind = "custom"
mu_target_pos = ["ones(3)", "zeros(3)"]
""")
        assert [c.scenario.mu_target_pos for c in cfg.cells] == [(1, 1, 1), (0, 0, 0)]

    @pytest.mark.parametrize("text, msg", [
        ("seed = 1", "no cells"),
        ("[[cells]]\ntask = 'estimate'\ncolour = 1", "unknown field"),
        ("[[cells]]\nn = 5", "missing field 'task'"),
        ("bogus = 1\n[[cells]]\ntask = 'estimate'", "unknown top-level"),
        ("replicates = 0\n[[cells]]\ntask = 'estimate'", "replicates"),
        ("[[cells]]\ntask = 'estimate'\npi = 2.0", "pi must lie"),
        ("not toml [", "not valid TOML"),
    ])
    def test_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)

    def test_shipped_configs_parse(self):
        from pathlib import Path
        root = Path(__file__).resolve().parents[1] / "configs"
        files = sorted(root.glob("*.toml"))
        assert files
        for f in files:
            cells = simulate.load_config(f).cells
            labels = [c.label() for c in cells]
            assert cells and len(set(labels)) == len(labels), f.name

    def test_labels_describe_shifted_means(self):
        c = Cell(ScenarioConfig(p=3, kind="sar", mu_target_pos=(1, 1, 0), n=10), "gof")
        assert c.label() == "gof-detm-sar-n10-pi0.75-pos1x2_0x1"
