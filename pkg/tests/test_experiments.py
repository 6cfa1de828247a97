"""Experiment protocol checks on miniature worlds."""

import numpy as np
import pytest

from epitrack.epidemic import EpidemicParams
from epitrack.errors import ConfigError
from epitrack.experiments import (
    ExperimentConfig,
    BootstrapRow,
    _fold_assignment,
    bootstrap_population_experiment,
    build_world,
    cross_validate,
    daily_infectious_counts,
    filter_with_daily_predictions,
)
from epitrack.observe import synthesize_observations
from epitrack.rng import substream
from epitrack.world import simulate_world


def tiny_config(**overrides):
    base = dict(
        n_persons=16,
        n_locations=4,
        n_homes=2,
        days=6,
        volunteer_fraction=0.5,
        epidemic=EpidemicParams(c1=0.01, c2=0.05, c3=0.002),
        tau=0.5,
        n_initial_infectious=4,
        n_particles=25,
        horizon_days=2,
        folds=2,
        prediction_runs=10,
        prediction_day=3,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            tiny_config(folds=1)
        with pytest.raises(ConfigError):
            tiny_config(volunteer_fraction=0.0)
        with pytest.raises(ConfigError):
            tiny_config(volunteer_fraction=1.2)
        with pytest.raises(ConfigError):
            tiny_config(days=2)  # no room for a 2-day horizon
        with pytest.raises(ConfigError):
            tiny_config(prediction_day=5)  # window would run past day 6

    def test_steps_per_day(self):
        assert tiny_config().steps_per_day == 48
        assert tiny_config(tau=0.25).steps_per_day == 96


class TestHelpers:
    def test_daily_counts(self):
        h = np.zeros((7, 3), dtype=np.int8)
        h[0, 0] = 1
        h[3, :2] = 1
        h[6, :] = 1
        assert daily_infectious_counts(h, 3).tolist() == [1, 2, 3]

    def test_fold_sizes_balance(self):
        counts = np.bincount(_fold_assignment(300, 10))
        assert counts.tolist() == [30] * 10
        counts = np.bincount(_fold_assignment(32, 10))
        assert counts.max() - counts.min() == 1

    def test_daily_prediction_alignment(self):
        config = tiny_config()
        spd = config.steps_per_day
        model = build_world(config, substream(3, "w"))
        truth = simulate_world(model, config.days * spd, substream(3, "t"))
        obs = synthesize_observations(
            truth.healths_history, truth.locations_history, model.panel,
            model.noise, spd, substream(3, "o"),
        )
        preds = filter_with_daily_predictions(model, obs, config, 3)
        assert preds.shape == (config.days + 1,)
        assert np.all(np.isnan(preds[: config.horizon_days]))
        assert np.all(np.isfinite(preds[config.horizon_days :]))
        assert np.all(preds[config.horizon_days :] >= 0.0)
        assert np.all(preds[config.horizon_days :] <= config.n_persons)


class TestBootstrap:
    def test_table_shape_and_determinism(self):
        config = tiny_config()
        fractions = (0.5, 0.25)
        out = bootstrap_population_experiment(
            config, volunteer_fractions=fractions, n_replicates=2, seed=11
        )
        # per replicate: 1 persistence row + (filter + scaling) per level
        assert len(out.rows) == 2 * (1 + 2 * len(fractions))
        for row in out.rows:
            assert np.isfinite(row.r2)
            assert row.r2 <= 1.0
        assert np.isfinite(out.mean_r2("filter", 0.5))
        assert np.isfinite(out.mean_r2("persistence"))

        again = bootstrap_population_experiment(
            config, volunteer_fractions=fractions, n_replicates=2, seed=11
        )
        assert again.rows == out.rows

    def test_replicates_validated(self):
        with pytest.raises(ConfigError):
            bootstrap_population_experiment(tiny_config(), n_replicates=0)

    def test_thread_pool_does_not_change_rows(self):
        config = tiny_config()
        serial = bootstrap_population_experiment(
            config, volunteer_fractions=(0.5,), n_replicates=3, seed=2, n_jobs=1
        )
        pooled = bootstrap_population_experiment(
            config, volunteer_fractions=(0.5,), n_replicates=3, seed=2, n_jobs=4
        )
        assert pooled.rows == serial.rows

    def test_mean_r2_filters_rows(self):
        result = bootstrap_population_experiment(
            tiny_config(), volunteer_fractions=(0.5,), n_replicates=1, seed=4
        )
        by_hand = [r.r2 for r in result.rows if r.method == "filter"]
        assert result.mean_r2("filter", 0.5) == pytest.approx(np.mean(by_hand))


class TestCrossValidate:
    def _world(self, seed=7):
        config = tiny_config(folds=2, prediction_day=3)
        model = build_world(config, substream(seed, "w"))
        n_steps = config.days * config.steps_per_day
        truth = simulate_world(model, n_steps, substream(seed, "t"))
        obs = synthesize_observations(
            truth.healths_history, truth.locations_history, model.panel,
            model.noise, config.steps_per_day, substream(seed, "o"),
        )
        return config, model, truth, obs

    def test_scores_every_volunteer_once(self):
        config, model, truth, obs = self._world()
        out = cross_validate(model, truth, obs, config, seed=5)
        n_vol = len(model.panel.volunteers)
        assert out.labels.shape == (n_vol,)
        assert out.scores_scans_kept.shape == (n_vol,)
        assert set(out.fold_of) == set(range(config.folds))
        for ap in (out.ap_scans_kept, out.ap_scans_held, out.ap_in_sample):
            assert 0.0 <= ap <= 1.0
        assert out.prevalence == pytest.approx(out.labels.mean())

    def test_labels_match_truth_window(self):
        config, model, truth, obs = self._world()
        out = cross_validate(model, truth, obs, config, seed=5)
        spd = config.steps_per_day
        t0 = config.prediction_day * spd
        window = truth.healths_history[t0 + 1 : t0 + config.horizon_days * spd + 1]
        want = (window == 1).any(axis=0)[list(model.panel.volunteers)]
        assert np.array_equal(out.labels, want)

    def test_deterministic(self):
        config, model, truth, obs = self._world()
        a = cross_validate(model, truth, obs, config, seed=5)
        b = cross_validate(model, truth, obs, config, seed=5)
        assert np.array_equal(a.scores_scans_kept, b.scores_scans_kept)
        assert np.array_equal(a.scores_scans_held, b.scores_scans_held)
        assert a.ap_in_sample == b.ap_in_sample

    def test_thread_pool_does_not_change_scores(self):
        config, model, truth, obs = self._world()
        serial = cross_validate(model, truth, obs, config, seed=5, n_jobs=1)
        pooled = cross_validate(model, truth, obs, config, seed=5, n_jobs=4)
        assert np.array_equal(serial.scores_scans_kept, pooled.scores_scans_kept)
        assert np.array_equal(serial.scores_scans_held, pooled.scores_scans_held)

    def test_window_bounds_checked(self):
        # a truth shorter than the config's horizon must be rejected
        config = tiny_config(folds=2, prediction_day=4)
        model = build_world(config, substream(7, "w"))
        spd = config.steps_per_day
        short = simulate_world(model, 5 * spd, substream(7, "t"))
        obs = synthesize_observations(
            short.healths_history, short.locations_history, model.panel,
            model.noise, spd, substream(7, "o"),
        )
        with pytest.raises(ConfigError):
            cross_validate(model, short, obs, config, seed=5)
