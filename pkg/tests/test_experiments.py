import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from attnlab import cli, densities, limits
from attnlab._expr import compile_log_density
from attnlab.config import build_density, parse_config, parse_grid_query
from attnlab.errors import ConfigError
from attnlab.experiments import run_experiment, trial_rng

BASE = {
    "d": 3,
    "master_seed": 7,
    "density": {"variant": "uniform"},
    "query": [1.0, 0.0, 0.0],
}


def make_cfg(tmp_path, **kw):
    data = dict(BASE)
    data["output_dir"] = str(tmp_path / "out")
    data.update(kw)
    return parse_config(data)


def read_csv(path):
    header_comments = []
    with open(path) as f:
        lines = f.read().splitlines()
    i = 0
    while lines[i].startswith("#"):
        header_comments.append(lines[i])
        i += 1
    columns = lines[i].split(",")
    rows = [line.split(",") for line in lines[i + 1:]]
    return header_comments, columns, rows


# ---------------------------------------------------------------------------
# config and expression grammar

def test_expression_grammar_accepts_density_forms():
    f = compile_log_density("x1*x2", 3)
    x = np.array([[0.3, -0.5, 0.81], [1.0, 0.0, 0.0]])
    np.testing.assert_allclose(f(x), x[:, 0] * x[:, 1])
    g = compile_log_density("2.0*x1 + exp(x2/2) - x3**2", 3)
    np.testing.assert_allclose(g(x), 2 * x[:, 0] + np.exp(x[:, 1] / 2) - x[:, 2] ** 2)
    const = compile_log_density("0.5", 2)
    assert const(np.array([0.0, 1.0])) == pytest.approx(0.5)


@pytest.mark.parametrize("expr", [
    "__import__('os')", "x1; x2", "x4", "foo(x1)", "exp(x1, x2)", "x1 @ x2",
    "'a'", "lambda: 1", "[x1]",
])
def test_expression_grammar_rejects(expr):
    with pytest.raises(ConfigError):
        compile_log_density(expr, 3)


def test_parse_config_validation_errors():
    with pytest.raises(ConfigError):
        parse_config({"d": 3})  # no experiment
    with pytest.raises(ConfigError):
        parse_config({"experiment": "nope", "d": 3})
    with pytest.raises(ConfigError):
        parse_config({"experiment": "critical", "d": 3})  # needs n + schedule
    with pytest.raises(ConfigError):
        parse_config({"experiment": "critical", "d": 3, "n": 100,
                      "beta_schedule": {"exponent": 1.0},
                      "regime_thresholds": {"lo": 5.0, "hi": 0.2}})
    with pytest.raises(ConfigError):
        parse_config({"experiment": "heatmap", "d": 5})  # needs grids
    with pytest.raises(ConfigError):
        parse_config({"experiment": "rope", "d": 3, "n": 10,
                      "beta_schedule": {"exponent": 1.0}})  # needs rope block


def test_build_density_variants():
    assert isinstance(build_density({"variant": "uniform"}, 4), densities.UniformDensity)
    vmf = build_density({"variant": "vmf", "mean": [0, 0, 1], "concentration": 2.0}, 3)
    assert isinstance(vmf, densities.VonMisesFisherDensity)
    custom = build_density({"variant": "custom", "log_expr": "x1*x2",
                            "envelope": math.e, "normalization_samples": 10**5}, 3, seed=1)
    assert custom.is_normalized
    reference = densities.ExpBilinearDensity()
    assert abs(custom.normalization - reference.normalization) <= 5.0 * custom.normalization_stderr
    with pytest.raises(ConfigError):
        build_density({"variant": "exp_bilinear"}, 4)


def test_parse_grid_query():
    assert parse_grid_query("grid(16)") == 16
    with pytest.raises(ConfigError):
        parse_grid_query("grid(x)")
    with pytest.raises(ConfigError):
        parse_grid_query("mesh(4)")


def test_custom_density_pickles():
    import pickle
    model = build_density({"variant": "custom", "log_expr": "x1*x2",
                           "envelope": math.e, "normalization_samples": 10**4}, 3, seed=2)
    clone = pickle.loads(pickle.dumps(model))
    x = np.array([0.6, 0.8, 0.0])
    assert clone.log_unnormalized(x) == model.log_unnormalized(x)
    assert clone.normalization == model.normalization


# ---------------------------------------------------------------------------
# seeding and determinism

def test_trial_rng_deterministic_and_distinct():
    a = trial_rng(5, 3).random(4)
    b = trial_rng(5, 3).random(4)
    c = trial_rng(5, 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def _dir_digest(path):
    h = hashlib.sha256()
    for p in sorted(Path(path).iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_outputs_bit_identical_across_workers(tmp_path):
    digests = []
    for i, workers in enumerate([1, 2, 1]):
        cfg = make_cfg(tmp_path / str(i), experiment="critical", n=500, trials=12,
                       workers=workers, beta_schedule={"gamma": 1.0, "exponent": 1.0})
        run_experiment(cfg)
        digests.append(_dir_digest(tmp_path / str(i) / "out"))
    assert digests[0] == digests[1] == digests[2]


# ---------------------------------------------------------------------------
# individual runners on small configs

def test_heatmap_zero_beta_column_exact(tmp_path):
    cfg = make_cfg(tmp_path, experiment="heatmap", d=5,
                   query=[1.0, 0, 0, 0, 0], trials=3,
                   grid={"n": {"values": [50, 200]}, "beta": {"values": [0.0, 10.0]}})
    result = run_experiment(cfg)
    comments, columns, rows = read_csv(result.csv_paths[0])
    assert columns == ["n", "beta", "mean_A1", "std_A1", "trials"]
    zero_rows = [r for r in rows if float(r[1]) == 0.0]
    assert len(zero_rows) == 2
    for r in zero_rows:
        assert float(r[2]) == 1.0 / int(r[0])
    # reference curve file: beta_ref = 2 n^alpha
    _, ref_cols, ref_rows = read_csv(result.csv_paths[1])
    assert ref_cols == ["n", "beta_ref"]
    assert float(ref_rows[0][1]) == pytest.approx(2.0 * 50 ** 0.5)


def test_csv_headers_record_config(tmp_path):
    cfg = make_cfg(tmp_path, experiment="heatmap", d=5, query=[1.0, 0, 0, 0, 0],
                   trials=2, grid={"n": {"values": [50]}, "beta": {"values": [1.0]}})
    result = run_experiment(cfg)
    comments, _, _ = read_csv(result.csv_paths[0])
    assert comments[0].startswith("# attnlab ")
    cfg_json = json.loads(comments[1].split("=", 1)[1])
    assert cfg_json["experiment"] == "heatmap"
    assert cfg_json["trials"] == 2
    assert json.loads(comments[2].split("=", 1)[1]) == []


def test_profile_runner(tmp_path):
    cfg = make_cfg(tmp_path, experiment="profile", d=5, query=[1.0, 0, 0, 0, 0],
                   n=400, trials=20, beta_schedule={"gamma": 1.0, "exponent": 0.125},
                   profile={"x_max": 2.0, "x_points": 5})
    result = run_experiment(cfg)
    _, columns, rows = read_csv(result.csv_paths[0])
    assert columns == ["x", "median_ratio", "q25", "q75", "theory_ratio",
                       "abs_scaled", "abs_theory", "cum_mass", "cum_theory"]
    assert float(rows[0][0]) == 0.0
    assert float(rows[0][1]) == 1.0
    assert float(rows[0][4]) == 1.0


def test_profile_regime_warning(tmp_path):
    cfg = make_cfg(tmp_path, experiment="profile", n=200, trials=2,
                   beta_schedule={"gamma": 1.0, "exponent": 1.0})  # critical, not subcritical
    result = run_experiment(cfg)
    comments, _, _ = read_csv(result.csv_paths[0])
    warnings = json.loads(comments[2].split("=", 1)[1])
    assert warnings and "Critical" in warnings[0]


def test_critical_runner_verdict_shape(tmp_path):
    cfg = make_cfg(tmp_path, experiment="critical", n=400, trials=30,
                   beta_schedule={"gamma": 1.0, "exponent": 1.0})
    result = run_experiment(cfg)
    verdict = result.verdict
    assert verdict["experiment"] == "critical"
    assert set(verdict["statistics"]) >= {"ks_rank_1", "ks_rank_2", "ks_rank_3",
                                          "local_intensity", "beta", "gamma"}
    assert verdict["thresholds"]["ks_max"] == 0.05
    assert verdict["seeds"]["master_seed"] == 7
    _, cols, rows = read_csv(result.csv_paths[0])
    assert cols == ["trial", "seed", "A1", "A2", "A3"]
    assert len(rows) == 30
    # ordering sanity: A1 >= A2 on every trial
    assert all(float(r[2]) >= float(r[3]) for r in rows)


def test_supercritical_runner(tmp_path):
    cfg = make_cfg(tmp_path, experiment="supercritical", n=2000, trials=100,
                   query=[0.0, 0.0, 1.0],
                   beta_schedule={"gamma": 1.0, "exponent": 1.5})
    result = run_experiment(cfg)
    _, cols, rows = read_csv(result.csv_paths[0])
    assert cols[:4] == ["trial", "seed", "a_n_T1", "A1"]
    verdict = result.verdict
    assert verdict["statistics"]["mean_A1"] >= 0.9
    _, tcols, trows = read_csv(result.csv_paths[1])
    assert tcols == ["r", "weibull_cdf", "weibull_pdf"]
    assert float(trows[0][1]) == 0.0


def test_field_runner_uniform_zero_drift(tmp_path):
    cfg = make_cfg(tmp_path, experiment="field", n=1000, trials=1,
                   query="grid(4)", field={"schedules": [1.25, 0.25]})
    result = run_experiment(cfg)
    _, cols, rows = read_csv(result.csv_paths[0])
    assert cols == ["qx", "qy", "qz", "chart_u", "chart_v",
                    "scaled_p1.25", "scaled_p0.25", "drift_field"]
    assert len(rows) == 16
    for r in rows:
        assert abs(float(r[-1])) <= 1e-12  # uniform: tangential drift vanishes


def test_field_expbilinear_antipodal_symmetry():
    # deterministic field is odd under x -> -x when the density is even
    model = densities.ExpBilinearDensity()
    rng = np.random.default_rng(70)
    from attnlab.sphere import normalize, tangent_project
    for _ in range(25):
        q = normalize(rng.standard_normal(3))
        f = tangent_project(q, limits.drift_and_covariance(model, q).drift)
        g = tangent_project(-q, limits.drift_and_covariance(model, -q).drift)
        np.testing.assert_allclose(g, -f, atol=1e-10)


def test_field_rejects_wrong_dimension():
    with pytest.raises(ConfigError):
        parse_config({"experiment": "field", "d": 4, "n": 100, "master_seed": 0,
                      "query": "grid(4)", "density": {"variant": "uniform"}})


def test_suboutput_runner_drift(tmp_path):
    cfg = make_cfg(tmp_path, experiment="suboutput", n=20000, trials=40,
                   query=[0.0, 1.0, 0.0],
                   density={"variant": "vmf", "mean": [1.0, 0.0, 0.0],
                            "concentration": 1.0},
                   beta_schedule={"gamma": 1.0, "exponent": 0.25})
    result = run_experiment(cfg)
    verdict = result.verdict
    assert verdict["statistics"]["regime"] == "SubcriticalDrift"
    assert "mean_rel_err" in verdict["statistics"]
    assert result.csv_paths[0].name == "suboutput_subcriticaldrift.csv"


def test_residual_runner_uniform_small_update(tmp_path):
    # constant density: the rescaled update is pure noise around zero
    cfg = make_cfg(tmp_path, experiment="residual", n=10000, trials=50,
                   beta_schedule={"gamma": 1.0, "exponent": 0.25},
                   residual={"mode": [0.0, 0.0, 1.0], "query_angle_deg": 20.0})
    result = run_experiment(cfg)
    _, cols, rows = read_csv(result.csv_paths[0])
    updates = np.array([[float(v) for v in r[2:5]] for r in rows])
    assert np.linalg.norm(updates.mean(axis=0)) <= 0.1


def test_rope_runner_uniform_cbar(tmp_path):
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    cfg = make_cfg(tmp_path, experiment="rope", n=500, trials=25,
                   beta_schedule={"gamma": 1.0, "exponent": 1.0},
                   rope={"frequencies": [2.0 * math.pi / golden]},
                   correlation={"m": 2, "weights": [1.0, 1.0, 1.0],
                                "base": {"variant": "uniform"}})
    result = run_experiment(cfg)
    assert result.verdict["statistics"]["c_bar"] == pytest.approx(0.5)
    assert len(result.csv_paths) == 2


def test_rope_zero_frequency_m0_matches_critical(tmp_path):
    # degenerate rope config reduces to the plain critical comparison
    common = dict(n=300, trials=15, beta_schedule={"gamma": 1.0, "exponent": 1.0})
    plain = make_cfg(tmp_path / "a", experiment="critical", **common)
    roped = make_cfg(tmp_path / "b", experiment="rope",
                     rope={"frequencies": [0.0]},
                     correlation={"m": 0, "weights": [1.0],
                                  "base": {"variant": "uniform"}},
                     **common)
    res_plain = run_experiment(plain)
    res_rope = run_experiment(roped)
    _, _, rows_p = read_csv(res_plain.csv_paths[0])
    _, _, rows_r = read_csv(res_rope.csv_paths[0])
    a1_p = np.array([float(r[2]) for r in rows_p])
    a1_r = np.array([float(r[2]) for r in rows_r])
    np.testing.assert_allclose(a1_r, a1_p, atol=1e-12)


def test_predict_examples(tmp_path):
    cfg = make_cfg(tmp_path, experiment="predict", d=5, query=[1.0, 0, 0, 0, 0],
                   grid={"n": {"values": [64]}, "beta": {"values": [8.0]}})
    result = run_experiment(cfg)
    table = json.loads(result.csv_paths[0].read_text())
    row = table["rows"][0]
    assert row["gamma_n"] == pytest.approx(1.0)
    assert row["label"] == "Critical"

    cfg2 = make_cfg(tmp_path / "b", experiment="predict", d=3,
                    grid={"n": {"values": [10000]}, "beta": {"values": [10.0]}})
    row2 = json.loads(run_experiment(cfg2).csv_paths[0].read_text())["rows"][0]
    assert row2["label"] == "SubcriticalDrift"
    assert row2["tau_n"] == pytest.approx(0.01)

    cfg3 = make_cfg(tmp_path / "c", experiment="predict", d=2, query=[1.0, 0.0],
                    grid={"n": {"values": [100]}, "beta": {"values": [1e6]}})
    row3 = json.loads(run_experiment(cfg3).csv_paths[0].read_text())["rows"][0]
    assert row3["label"] == "Supercritical"


# ---------------------------------------------------------------------------
# CLI

def test_cli_exit_codes(tmp_path):
    cfg_file = tmp_path / "small.toml"
    cfg_file.write_text(
        'experiment = "critical"\nd = 3\nn = 300\ntrials = 20\nmaster_seed = 1\n'
        'query = [1.0, 0.0, 0.0]\n\n[beta_schedule]\ngamma = 1.0\nexponent = 1.0\n\n'
        '[density]\nvariant = "uniform"\n')
    # underpowered run: artifacts written, certification fails -> exit 2
    code = cli.main(["critical", "--config", str(cfg_file), "--out", str(tmp_path / "o")])
    assert code == 2
    assert (tmp_path / "o" / "verdict.json").exists()
    # config error -> exit 1
    assert cli.main(["critical", "--config", str(tmp_path / "missing.toml")]) == 1
    bad = tmp_path / "bad.toml"
    bad.write_text('experiment = "critical"\nd = 3\n')
    assert cli.main(["critical", "--config", str(bad)]) == 1
    # prediction succeeds -> exit 0
    pred = tmp_path / "pred.toml"
    pred.write_text(
        'experiment = "predict"\nd = 3\nmaster_seed = 0\nquery = [1.0, 0.0, 0.0]\n'
        '[grid.n]\nvalues = [100]\n[grid.beta]\nvalues = [5.0]\n'
        '[density]\nvariant = "uniform"\n')
    assert cli.main(["predict", "--config", str(pred), "--out", str(tmp_path / "p")]) == 0


def test_cli_override_trials_and_seed(tmp_path):
    cfg_file = tmp_path / "c.toml"
    cfg_file.write_text(
        'experiment = "predict"\nd = 3\nmaster_seed = 1\nquery = [1.0, 0.0, 0.0]\n'
        '[grid.n]\nvalues = [100]\n[grid.beta]\nvalues = [5.0]\n'
        '[density]\nvariant = "uniform"\n')
    assert cli.main(["predict", "--config", str(cfg_file), "--seed", "9",
                     "--out", str(tmp_path / "o")]) == 0
    table = json.loads((tmp_path / "o" / "predict.json").read_text())
    assert table["config"]["master_seed"] == 9


def test_heatmap_rerun_identical_bytes(tmp_path):
    def once(sub):
        cfg = make_cfg(tmp_path / sub, experiment="heatmap", d=5,
                       query=[1.0, 0, 0, 0, 0], trials=5,
                       grid={"n": {"values": [64, 256]},
                             "beta": {"values": [2.0, 64.0]}})
        return run_experiment(cfg).csv_paths[0].read_bytes()
    assert once("a") == once("b")


def test_critical_gamma_doubling_sharpens(tmp_path):
    def median_a1(gamma, sub):
        cfg = make_cfg(tmp_path / sub, experiment="critical", n=2000, trials=60,
                       beta_schedule={"gamma": gamma, "exponent": 1.0})
        result = run_experiment(cfg)
        _, _, rows = read_csv(result.csv_paths[0])
        return float(np.median([float(r[2]) for r in rows]))
    assert median_a1(2.0, "g2") > median_a1(1.0, "g1")


def test_rope_rational_uniform_matches_limit(tmp_path):
    cfg = make_cfg(tmp_path, experiment="rope", n=10000, trials=1500,
                   beta_schedule={"gamma": 1.0, "exponent": 1.0},
                   rope={"frequencies": [2.0 * math.pi / 4.0]},
                   correlation={"m": 0, "weights": [1.0],
                                "base": {"variant": "uniform"}})
    result = run_experiment(cfg)
    stats_ = result.verdict["statistics"]
    assert stats_["c_bar"] == pytest.approx(0.5)
    assert stats_["orbit_period"] == 4
    assert stats_["ks_rank_1"] <= 0.07


def test_custom_density_end_to_end(tmp_path):
    cfg = make_cfg(tmp_path, experiment="critical", n=400, trials=10,
                   density={"variant": "custom", "log_expr": "x1*x2",
                            "envelope": math.e, "normalization_samples": 10**5},
                   beta_schedule={"gamma": 1.0, "exponent": 1.0})
    result = run_experiment(cfg)
    cq = result.verdict["statistics"]["local_intensity"]
    # matches the built-in density with the same shape up to MC normalization
    ref = densities.local_intensity(densities.ExpBilinearDensity(),
                                    np.array([1.0, 0.0, 0.0]))
    assert cq == pytest.approx(ref, rel=0.02)
