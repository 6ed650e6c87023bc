import numpy as np
import pytest

from conftest import random_transfer_instance
from transfer_bo._linalg import InputError
from transfer_bo.gp import KernelHyperparams, TaskDataset, condition, kernel_eval
from transfer_bo.models import (
    ModelFitter,
    fit_target_stage,
    make_joint_model,
    make_sequential_model,
    meta_train_sources,
    predict_bhgp,
    predict_mhgp,
    predict_shgp,
    train_sequential,
)


class TestSHGP:
    def test_empty_target_prior_is_source_posterior_plus_target_kernel(self, rng):
        src, _, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model(
            "SHGP", [src, TaskDataset.empty(1, 1)], [hp_s, hp_t]
        )
        Xq = rng.uniform(-3, 3, (6, 1))
        pred = predict_shgp(model, Xq)
        sp = condition(hp_s, src).predict(Xq)
        assert np.allclose(pred.mean, sp.mean, atol=1e-12)
        assert np.allclose(
            pred.covariance, sp.covariance + kernel_eval(hp_t, Xq, Xq), atol=1e-12
        )

    def test_vanishing_source_covariance_gives_plain_gp_with_transferred_mean(self, rng):
        # signal and noise shrink together, so the source posterior mean stays
        # finite while its covariance vanishes: the target becomes a plain GP
        # whose prior mean is the transferred source mean
        src, tgt, _, hp_t = random_transfer_instance(rng)
        hp_sure = KernelHyperparams.from_constrained(1e-13, [1.0], 1e-13)
        model = make_sequential_model("SHGP", [src, tgt], [hp_sure, hp_t])
        Xq = rng.uniform(-3, 3, (5, 1))
        pred = predict_shgp(model, Xq)
        source_gp = condition(hp_sure, src)
        plain = condition(
            hp_t, tgt, prior_mean=lambda X: source_gp.predict(X).mean
        ).predict(Xq)
        assert np.allclose(pred.mean, plain.mean, atol=1e-8)
        assert np.allclose(pred.covariance, plain.covariance, atol=1e-8)

    def test_matches_jointly_conditioned_hierarchy_with_two_sources(self, rng):
        src1, tgt, hp1, hp_t = random_transfer_instance(rng)
        X2 = rng.uniform(-3, 3, (5, 1))
        src2 = TaskDataset(X2, np.cos(X2[:, 0]), 1)
        hp2 = KernelHyperparams.from_constrained(0.8, [1.1], 0.03)
        tgt = TaskDataset(tgt.inputs, tgt.observations, 2)
        Xq = rng.uniform(-3, 3, (5, 1))
        seq = make_sequential_model("SHGP", [src1, src2, tgt], [hp1, hp2, hp_t])
        joint = make_joint_model("HGP", [src1, src2, tgt], [hp1, hp2, hp_t])
        ps, pj = seq.predict(Xq), joint.predict(Xq)
        assert np.max(np.abs(ps.mean - pj.mean)) < 1e-8
        assert np.max(np.abs(ps.covariance - pj.covariance)) < 1e-8

    def test_observation_never_increases_variance_at_its_location(self, rng):
        # fixed hyperparameters; conditioning shrinks the marginal there
        for _ in range(5):
            src, tgt, hp_s, hp_t = random_transfer_instance(rng)
            x_new = rng.uniform(-3, 3, (1, 1))
            before = make_sequential_model("SHGP", [src, tgt], [hp_s, hp_t])
            var_before = predict_shgp(before, x_new).variance[0]
            grown = tgt.appended(x_new[0], 0.3)
            after = make_sequential_model("SHGP", [src, grown], [hp_s, hp_t])
            var_after = predict_shgp(after, x_new).variance[0]
            assert var_after <= var_before + 1e-8


class TestMHGP:
    def test_variance_ignores_source_noise(self, rng):
        src, tgt, hp_s, hp_t = random_transfer_instance(rng)
        loud = hp_s.with_noise(hp_s.noise_variance * 100.0)
        Xq = rng.uniform(-3, 3, (6, 1))
        quiet_pred = predict_mhgp(make_sequential_model("MHGP", [src, tgt], [hp_s, hp_t]), Xq)
        loud_pred = predict_mhgp(make_sequential_model("MHGP", [src, tgt], [loud, hp_t]), Xq)
        assert np.array_equal(quiet_pred.covariance, loud_pred.covariance)
        assert not np.allclose(quiet_pred.mean, loud_pred.mean)

    def test_zero_source_mean_reduces_to_plain_gp(self, rng):
        Xs = rng.uniform(-3, 3, (8, 1))
        src = TaskDataset(Xs, np.zeros(8), 0)  # posterior mean is exactly zero
        _, tgt, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model("MHGP", [src, tgt], [hp_s, hp_t])
        Xq = rng.uniform(-3, 3, (5, 1))
        pred = predict_mhgp(model, Xq)
        plain = condition(hp_t, tgt).predict(Xq)
        assert np.allclose(pred.mean, plain.mean, atol=1e-12)
        assert np.allclose(pred.covariance, plain.covariance, atol=1e-12)


class TestBHGP:
    def test_empty_target_boost_is_source_posterior_covariance(self, rng):
        src, _, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model(
            "BHGP", [src, TaskDataset.empty(1, 1)], [hp_s, hp_t]
        )
        Xq = rng.uniform(-3, 3, (5, 1))
        boost = model.boost_covariance(Xq)
        sp = condition(hp_s, src).predict(Xq)
        assert np.allclose(boost, sp.covariance, atol=1e-12)
        pred = predict_bhgp(model, Xq)
        shgp = make_sequential_model(
            "SHGP", [src, TaskDataset.empty(1, 1)], [hp_s, hp_t]
        ).predict(Xq)
        assert np.allclose(pred.mean, shgp.mean, atol=1e-8)
        assert np.allclose(pred.covariance, shgp.covariance, atol=1e-8)

    def test_single_point_closed_form(self, rng):
        # direct evaluation of the boosted posterior for one target point
        src, _, hp_s, hp_t = random_transfer_instance(rng)
        xt = np.array([[0.4]])
        yt = np.array([0.9])
        tgt = TaskDataset(xt, yt, 1)
        xq = np.array([[1.3]])
        model = make_sequential_model("BHGP", [src, tgt], [hp_s, hp_t])
        pred = predict_bhgp(model, xq)

        sgp = condition(hp_s, src)
        joint = sgp.predict(np.vstack([xt, xq]))
        m_t, m_q = joint.mean
        S_tt, S_tq = joint.covariance[0, 0], joint.covariance[0, 1]
        S_qq = joint.covariance[1, 1]
        k_tt = hp_t.signal_variance + hp_t.noise_variance
        k_qt = float(kernel_eval(hp_t, xq, xt)[0, 0])
        gain = k_qt / k_tt
        mean_direct = m_q + gain * (yt[0] - m_t)
        boost = S_qq + gain * S_tt * gain - 2.0 * gain * S_tq
        cov_direct = hp_t.signal_variance - gain * k_qt + boost
        assert pred.mean[0] == pytest.approx(mean_direct, abs=1e-10)
        assert pred.covariance[0, 0] == pytest.approx(cov_direct, abs=1e-10)

    def test_mean_always_equals_mhgp_mean(self, rng):
        for n_s in (1, 2):
            datasets, kernels = [], []
            for i in range(n_s):
                X = rng.uniform(-3, 3, (6, 1))
                datasets.append(TaskDataset(X, np.sin(X[:, 0]) + 0.1 * i, i))
                kernels.append(
                    KernelHyperparams.from_constrained(1.0 + 0.2 * i, [0.9], 0.05)
                )
            Xt = rng.uniform(-3, 3, (4, 1))
            datasets.append(TaskDataset(Xt, np.cos(Xt[:, 0]), n_s))
            kernels.append(KernelHyperparams.from_constrained(0.6, [1.2], 0.1))
            Xq = rng.uniform(-3, 3, (7, 1))
            pb = make_sequential_model("BHGP", datasets, kernels).predict(Xq)
            pm = make_sequential_model("MHGP", datasets, kernels).predict(Xq)
            assert np.max(np.abs(pb.mean - pm.mean)) < 1e-10

    def test_boost_is_psd_and_inflates_variance(self, rng):
        src, tgt, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model("BHGP", [src, tgt], [hp_s, hp_t])
        Xq = rng.uniform(-3, 3, (8, 1))
        boost = model.boost_covariance(Xq)
        eigs = np.linalg.eigvalsh(0.5 * (boost + boost.T))
        assert eigs[0] >= -1e-8 * max(eigs[-1], 1.0)
        pb = model.predict(Xq)
        pm = make_sequential_model("MHGP", [src, tgt], [hp_s, hp_t]).predict(Xq)
        assert np.all(pb.variance >= pm.variance - 1e-10)
        assert np.allclose(pb.covariance, pm.covariance + boost, atol=1e-10)


class TestSequentialTraining:
    @pytest.mark.parametrize("kind", ["SHGP", "BHGP", "MHGP"])
    def test_trains_and_predicts(self, kind, rng):
        src, tgt, *_ = random_transfer_instance(rng, n_s=10, n_t=5)
        model = train_sequential(kind, [src], tgt, rng=0, n_restarts=2)
        pred = model.predict(rng.uniform(-3, 3, (4, 1)))
        assert np.all(np.isfinite(pred.mean))
        assert np.all(pred.variance >= 0.0)

    def test_sources_frozen_by_target_stage(self, rng):
        src, tgt, *_ = random_transfer_instance(rng, n_s=10, n_t=5)
        levels = meta_train_sources("SHGP", [src], rng=0, n_restarts=2)
        raw_before = [lv.hp.to_raw_vector().copy() for lv in levels]
        model = fit_target_stage("SHGP", levels, tgt, rng=1, n_restarts=2)
        assert model.source_levels == levels
        for lv, raw in zip(model.source_levels, raw_before):
            assert np.array_equal(lv.hp.to_raw_vector(), raw)

    def test_mhgp_target_stage_is_plain_fit_on_residuals(self, rng):
        # replaying the target stage as an ordinary GP fit on the residuals
        # about the chain mean yields identical hyperparameters
        from transfer_bo.gp import normalize_targets, optimize_hyperparameters
        from transfer_bo.models import source_chain

        src, tgt, *_ = random_transfer_instance(rng, n_s=10, n_t=5)
        levels = meta_train_sources("MHGP", [src], rng=0, n_restarts=2)
        model = fit_target_stage("MHGP", levels, tgt, rng=7, n_restarts=2)

        chain_mean, _ = source_chain("MHGP", levels, tgt.inputs)
        resid = tgt.observations - chain_mean
        resid_norm, _, scale = normalize_targets(resid)
        hp = optimize_hyperparameters(
            TaskDataset(tgt.inputs, resid_norm, 1),
            n_restarts=2,
            rng=np.random.default_rng(7),
        ).scaled(scale ** 2)
        assert np.array_equal(
            model.target_level.hp.to_raw_vector(), hp.to_raw_vector()
        )

    def test_meta_training_ignores_target(self, rng):
        src, tgt, *_ = random_transfer_instance(rng, n_s=10, n_t=5)
        other = TaskDataset(tgt.inputs, tgt.observations + 100.0, 1)
        m1 = train_sequential("MHGP", [src], tgt, rng=2, n_restarts=2)
        m2 = train_sequential("MHGP", [src], other, rng=2, n_restarts=2)
        assert np.array_equal(
            m1.source_levels[0].hp.to_raw_vector(),
            m2.source_levels[0].hp.to_raw_vector(),
        )

    def test_fitter_reuses_meta_training(self, rng):
        src, tgt, *_ = random_transfer_instance(rng, n_s=8, n_t=3)
        fitter = ModelFitter("SHGP", [src], n_restarts=2)
        gen = np.random.default_rng(0)
        m1 = fitter.fit(tgt, gen)
        m2 = fitter.fit(tgt.appended([0.5], 1.0), gen)
        assert m1.source_levels == m2.source_levels

    def test_requires_a_source(self, rng):
        _, tgt, *_ = random_transfer_instance(rng)
        with pytest.raises(InputError):
            train_sequential("SHGP", [], tgt, rng=0)

    def test_empty_target_stage(self, rng):
        src, _, *_ = random_transfer_instance(rng, n_s=10)
        model = train_sequential("SHGP", [src], TaskDataset.empty(1, 1), rng=0, n_restarts=2)
        pred = model.predict(np.zeros((1, 1)))
        assert np.isfinite(pred.mean[0])

    def test_kind_checked_predictors(self, rng):
        src, tgt, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model("SHGP", [src, tgt], [hp_s, hp_t])
        with pytest.raises(InputError):
            predict_bhgp(model, np.zeros((1, 1)))

    def test_predict_mean_var_matches_full_predict_across_chunks(self, rng):
        src, tgt, hp_s, hp_t = random_transfer_instance(rng)
        model = make_sequential_model("BHGP", [src, tgt], [hp_s, hp_t])
        Xq = rng.uniform(-3, 3, (401, 1))
        mean, var = model.predict_mean_var(Xq, chunk=100)
        pred = model.predict(Xq)
        assert np.allclose(mean, pred.mean, atol=1e-10)
        assert np.allclose(var, pred.variance, atol=1e-10)
