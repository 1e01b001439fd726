"""Optimizer, config, training loop mechanics, and the evaluate path."""

import numpy as np
import pytest

from fairmi import data, model, trainer


def small_dataset(seed=0, per_cell=20):
    spec = data.SyntheticSpec(
        classes=2, groups=2, per_cell_count=per_cell, class_sep=6.0,
        group_shift=3.0, dim=5, noise_sd=0.8, seed=seed,
    )
    return data.generate_synthetic(spec)


def small_config(**kw):
    base = dict(
        k=2, latent_dim=3, layer_dims=(5, 8, 3), warmup_epochs=2,
        max_epochs=5, batch_size=32, learning_rate=1e-3, seed=0,
    )
    base.update(kw)
    return trainer.TrainConfig(**base)


class TestAdam:
    def test_zero_gradients_leave_params_alone(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        out, state = trainer.adam_step(params, grads, trainer.AdamState(), 1, lr=0.1)
        np.testing.assert_array_equal(out["w"], params["w"])
        np.testing.assert_array_equal(state.m["w"], 0.0)

    def test_first_step_moves_by_lr_against_gradient_sign(self):
        params = {"w": np.array([0.0, 0.0])}
        grads = {"w": np.array([3.0, -0.5])}
        out, _ = trainer.adam_step(params, grads, trainer.AdamState(), 1, lr=0.01)
        # bias correction makes m_hat = g and v_hat = g*g on step one
        np.testing.assert_allclose(out["w"], [-0.01, 0.01], atol=1e-8)

    def test_ten_step_recurrence_matches_reference(self):
        """Independent elementwise recurrence with bias correction."""
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        rng = np.random.default_rng(0)
        w = rng.normal(size=4)
        ref_w, m, v = w.copy(), np.zeros(4), np.zeros(4)
        params, state = {"w": w.copy()}, trainer.AdamState()
        for step in range(1, 11):
            g = rng.normal(size=4)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            ref_w = ref_w - lr * (m / (1 - b1 ** step)) / (np.sqrt(v / (1 - b2 ** step)) + eps)
            params, state = trainer.adam_step(
                params, {"w": g.copy()}, state, step, lr, b1, b2, eps)
            np.testing.assert_allclose(params["w"], ref_w, atol=1e-12)

    def test_non_finite_gradient_rejected(self):
        with pytest.raises(trainer.TrainError):
            trainer.adam_step({"w": np.zeros(1)}, {"w": np.array([np.inf])},
                              trainer.AdamState(), 1, lr=0.1)

    def test_step_counts_from_one(self):
        with pytest.raises(trainer.TrainError):
            trainer.adam_step({"w": np.zeros(1)}, {"w": np.zeros(1)},
                              trainer.AdamState(), 0, lr=0.1)

    def test_inputs_not_mutated(self):
        params = {"w": np.array([1.0])}
        state = trainer.AdamState()
        trainer.adam_step(params, {"w": np.array([2.0])}, state, 1, lr=0.1)
        np.testing.assert_array_equal(params["w"], [1.0])
        assert state.m == {}


class TestConfig:
    def test_from_dict_round_trip(self):
        cfg = trainer.TrainConfig.from_dict({"k": 3, "alpha": 0.1, "seed": 7})
        assert cfg.k == 3 and cfg.alpha == 0.1 and cfg.seed == 7
        assert cfg.beta_fair == 0.20 and cfg.tau == 0.1  # defaults kept

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(trainer.TrainError) as err:
            trainer.TrainConfig.from_dict({"k": 2, "alhpa": 0.1})
        assert "alhpa" in str(err.value)

    def test_from_dict_requires_k(self):
        with pytest.raises(trainer.TrainError):
            trainer.TrainConfig.from_dict({"alpha": 0.1})

    @pytest.mark.parametrize(
        "kw",
        [
            {"k": 1},
            {"k": 2, "tau": 0.0},
            {"k": 2, "alpha": -0.1},
            {"k": 2, "warmup_epochs": 10, "max_epochs": 5},
            {"k": 2, "batch_size": 0},
            {"k": 2, "layer_dims": (4, 8, 99), "latent_dim": 3},
            {"k": 2, "adam_beta1": 1.0},
        ],
    )
    def test_invalid_settings_rejected(self, kw):
        with pytest.raises(trainer.TrainError):
            trainer.TrainConfig(**kw)

    def test_default_layer_dims_resolution(self):
        cfg = trainer.TrainConfig(k=2, latent_dim=16)
        assert cfg.resolve_layer_dims(30) == (30, 256, 64, 16)

    def test_explicit_layer_dims_must_match_data(self):
        cfg = small_config()
        assert cfg.resolve_layer_dims(5) == (5, 8, 3)
        with pytest.raises(trainer.TrainError):
            cfg.resolve_layer_dims(7)


class TestFit:
    def test_warmup_never_builds_cluster_terms(self):
        seen_terms, refreshes = [], []
        hooks = trainer.TrainerHooks(
            on_centers_refresh=lambda epoch, centers: refreshes.append(epoch),
            on_batch=lambda epoch, b, values: seen_terms.append((epoch, set(values))),
        )
        cfg = small_config(warmup_epochs=3, max_epochs=5)
        trainer.fit(cfg, small_dataset(), hooks)
        for epoch, terms in seen_terms:
            if epoch < 3:
                assert terms == {"l_rec", "l_total"}
            else:
                assert terms == {"l_rec", "l_clu", "l_fair", "l_total"}
        assert refreshes == [3, 4]  # once per post-warmup epoch

    def test_centers_refresh_precedes_batches(self):
        order = []
        hooks = trainer.TrainerHooks(
            on_centers_refresh=lambda epoch, centers: order.append(("refresh", epoch)),
            on_batch=lambda epoch, b, values: order.append(("batch", epoch, b)),
        )
        cfg = small_config(warmup_epochs=0, max_epochs=2, batch_size=30)
        trainer.fit(cfg, small_dataset(), hooks)
        per_epoch = {}
        for event in order:
            per_epoch.setdefault(event[1], []).append(event[0])
        for epoch, events in per_epoch.items():
            assert events[0] == "refresh"
            assert events.count("refresh") == 1

    def test_warmup_loss_decreases(self):
        cfg = small_config(warmup_epochs=8, max_epochs=8, learning_rate=5e-3)
        _, logs = trainer.fit(cfg, small_dataset())
        assert logs[-1].l_rec < logs[0].l_rec

    def test_warmup_rows_log_identity_total(self):
        cfg = small_config(warmup_epochs=2, max_epochs=3)
        _, logs = trainer.fit(cfg, small_dataset())
        for log in logs[:2]:
            assert log.l_clu == 0.0 and log.l_fair == 0.0
            assert log.l_total == log.l_rec

    def test_total_recomposes_from_terms(self):
        cfg = small_config(warmup_epochs=0, max_epochs=3, alpha=0.3, beta_fair=0.7)
        _, logs = trainer.fit(cfg, small_dataset())
        for log in logs:
            np.testing.assert_allclose(
                log.l_total, log.l_rec + 0.3 * log.l_clu + 0.7 * log.l_fair, atol=1e-9)

    def test_zero_weights_reduce_to_reconstruction(self):
        cfg = small_config(warmup_epochs=0, max_epochs=3, alpha=0.0, beta_fair=0.0)
        _, logs = trainer.fit(cfg, small_dataset())
        for log in logs:
            np.testing.assert_allclose(log.l_total, log.l_rec, atol=1e-12)

    def test_same_seed_reproduces_params_and_logs(self):
        cfg = small_config()
        ds = small_dataset()
        p1, logs1 = trainer.fit(cfg, ds)
        p2, logs2 = trainer.fit(cfg, ds)
        for (w1, b1), (w2, b2) in zip(p1.all_arrays(), p2.all_arrays()):
            np.testing.assert_array_equal(w1, w2)
            np.testing.assert_array_equal(b1, b2)
        assert logs1 == logs2

    def test_different_seed_differs(self):
        ds = small_dataset()
        _, logs1 = trainer.fit(small_config(seed=0), ds)
        _, logs2 = trainer.fit(small_config(seed=1), ds)
        assert logs1 != logs2

    def test_epoch_logs_carry_supervised_metrics_when_labeled(self):
        cfg = small_config(max_epochs=3)
        _, logs = trainer.fit(cfg, small_dataset())
        for log in logs:
            assert log.acc is not None and log.mnce is not None
            assert np.isfinite(log.mi_gc) and np.isfinite(log.cmi_xcg)

    def test_unlabeled_data_leaves_quality_fields_none(self):
        ds = small_dataset()
        unlabeled = data.Dataset(features=ds.features, groups=ds.groups)
        cfg = small_config(max_epochs=2)
        _, logs = trainer.fit(cfg, unlabeled)
        for log in logs:
            assert log.acc is None and log.f_beta is None
            assert np.isfinite(log.mi_gc)

    def test_too_few_samples_rejected(self):
        ds = small_dataset()
        tiny = data.Dataset(features=ds.features[:3], groups=np.array([0, 1, 0]))
        with pytest.raises(trainer.TrainError):
            trainer.fit(small_config(k=4, layer_dims=None, latent_dim=3), tiny)

    def test_params_hook_sees_every_epoch(self):
        seen = []
        hooks = trainer.TrainerHooks(on_params=lambda epoch, p: seen.append((epoch, p)))
        cfg = small_config(max_epochs=4)
        final, _ = trainer.fit(cfg, small_dataset(), hooks)
        assert [e for e, _ in seen] == [0, 1, 2, 3]
        last = seen[-1][1]
        np.testing.assert_array_equal(last.encoder[0][0], final.encoder[0][0])

    def test_fairness_term_suppresses_group_leakage_when_groups_dominate(self):
        """On data where the group offset dominates class structure, training
        without the fairness term leaves group information in the clusters;
        turning it on lowers the final leakage, averaged over seeds."""
        final_mi = {1.0: [], 0.0: []}
        for seed in (1, 2, 3):
            spec = data.SyntheticSpec(
                classes=3, groups=2, per_cell_count=60, class_sep=4.0,
                group_shift=12.0, dim=8, noise_sd=1.0, seed=seed,
            )
            ds = data.generate_synthetic(spec)
            for beta in (1.0, 0.0):
                cfg = trainer.TrainConfig(
                    k=3, beta_fair=beta, seed=seed, latent_dim=8,
                    layer_dims=(8, 32, 8), warmup_epochs=10, max_epochs=80,
                    batch_size=128, learning_rate=1e-3,
                )
                _, logs = trainer.fit(cfg, ds)
                final_mi[beta].append(logs[-1].mi_gc)
        assert np.mean(final_mi[1.0]) < np.mean(final_mi[0.0])


class TestLogCSV:
    def test_format_and_empty_cells(self, tmp_path):
        logs = [
            trainer.EpochLog(0, 1.5, 0.0, 0.0, 1.5, 0.25, 0.5),
            trainer.EpochLog(1, 1.25, -0.5, 0.125, 1.0, 0.2, 0.45,
                             acc=0.9, nmi=0.8, bal=0.7, mnce=0.6, f_beta=0.685),
        ]
        path = tmp_path / "log.csv"
        trainer.write_log_csv(logs, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(trainer.LOG_COLUMNS)
        assert lines[1] == "0,1.500000,0.000000,0.000000,1.500000,0.250000,0.500000,,,,,"
        assert lines[2].startswith("1,1.250000,-0.500000,0.125000,1.000000")
        assert lines[2].endswith("0.900000,0.800000,0.700000,0.600000,0.685000")

    def test_byte_identical_for_identical_runs(self, tmp_path):
        cfg = small_config(max_epochs=3)
        ds = small_dataset()
        paths = []
        for name in ("a.csv", "b.csv"):
            _, logs = trainer.fit(cfg, ds)
            path = tmp_path / name
            trainer.write_log_csv(logs, path)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()


class TestEvaluate:
    def test_fresh_model_report_is_complete(self):
        ds = small_dataset()
        cfg = small_config()
        params = model.init_params((5, 8, 3), ds.n_groups, seed=0)
        report = trainer.evaluate(params, ds, cfg)
        assert report.n == len(ds) and report.k >= 1
        assert 0.0 <= report.acc <= 1.0
        assert report.mi_gc >= -1e-12

    def test_deterministic(self):
        ds = small_dataset()
        cfg = small_config()
        params = model.init_params((5, 8, 3), ds.n_groups, seed=3)
        assert trainer.evaluate(params, ds, cfg) == trainer.evaluate(params, ds, cfg)

    def test_degenerate_encoder_still_reports(self, caplog):
        import logging

        ds = small_dataset()
        cfg = small_config()
        init = model.init_params((5, 8, 3), ds.n_groups, seed=0)
        flat = {name: np.zeros_like(arr) for name, arr in model.flatten_params(init).items()}
        zeroed = model.params_from_flat(flat, (5, 8, 3), ds.n_groups)
        with caplog.at_level(logging.WARNING):
            report = trainer.evaluate(zeroed, ds, cfg)
        assert "jitter" in caplog.text
        assert report.n == len(ds)

    def test_trained_model_beats_chance_on_easy_data(self):
        spec = data.SyntheticSpec(
            classes=2, groups=2, per_cell_count=40, class_sep=10.0,
            group_shift=0.0, dim=5, noise_sd=0.5, seed=1,
        )
        ds = data.generate_synthetic(spec)
        cfg = small_config(warmup_epochs=5, max_epochs=30, learning_rate=2e-3)
        params, _ = trainer.fit(cfg, ds)
        report = trainer.evaluate(params, ds, cfg)
        assert report.acc >= 0.9
