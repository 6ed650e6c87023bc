"""Acceptance criteria, one test per criterion, each printing PASS/FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. AC-7 executes the full desk-scale benchmark grid (30 seeds x 6 model
kinds x 30 iterations) and takes the longest by far.
"""

import json

import numpy as np

from conftest import random_transfer_instance
from transfer_bo.gp import (
    KernelHyperparams,
    TaskDataset,
    condition,
    log_marginal_likelihood,
)
from transfer_bo.models import (
    block_inverse_wsgp,
    make_joint_model,
    make_sequential_model,
    make_wsgp_model,
    train_sequential,
)
from transfer_bo.oracles import (
    lemma1_check,
    mc_posterior_average,
    mc_prior_average,
    timing_sweep,
)


def report(name, passed, detail):
    print(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")
    return passed


def test_ac1_corollary_exactness():
    """HGP conditioned on source data equals the SHGP target prior."""
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(10):
        src, _, hp_s, hp_t = random_transfer_instance(rng)
        empty = TaskDataset.empty(1, 1)
        Xq = rng.uniform(-3, 3, (6, 1))
        hgp = make_joint_model("HGP", [src, empty], [hp_s, hp_t]).predict(Xq)
        shgp = make_sequential_model("SHGP", [src, empty], [hp_s, hp_t]).predict(Xq)
        worst = max(
            worst,
            float(np.max(np.abs(hgp.mean - shgp.mean))),
            float(np.max(np.abs(hgp.covariance - shgp.covariance))),
        )
    ok = worst <= 1e-8
    assert report("AC-1", ok, f"max entrywise deviation {worst:.2e} (tol 1e-8)")


def _fixed_oracle_instance():
    rng = np.random.default_rng(2024)
    return random_transfer_instance(rng, n_s=8, n_t=4), np.linspace(-2.5, 2.5, 5)[:, None]


def test_ac2_prior_averaging_oracle():
    """SHGP closed form within 3 Monte-Carlo standard errors of the
    prior-averaging oracle."""
    (src, tgt, hp_s, hp_t), Xq = _fixed_oracle_instance()
    shgp = make_sequential_model("SHGP", [src, tgt], [hp_s, hp_t]).predict(Xq)
    est = mc_prior_average(condition(hp_s, src), tgt, hp_t, Xq, 5000, 79)
    dev_mean = float(np.max(np.abs(est.mean - shgp.mean) / est.se_mean))
    dev_var = float(
        np.max(np.abs(np.diag(est.covariance) - shgp.variance) / est.se_variance)
    )
    ok = dev_mean <= 3.0 and dev_var <= 3.0
    assert report(
        "AC-2",
        ok,
        f"max mean dev {dev_mean:.2f} se, max var dev {dev_var:.2f} se "
        f"(ESS {est.effective_sample_size:.0f}, tol 3 se)",
    )


def test_ac3_posterior_averaging_oracle():
    """BHGP closed form within 3 se of the posterior-averaging oracle, and
    BHGP mean identical to MHGP mean."""
    (src, tgt, hp_s, hp_t), Xq = _fixed_oracle_instance()
    bhgp = make_sequential_model("BHGP", [src, tgt], [hp_s, hp_t]).predict(Xq)
    mhgp = make_sequential_model("MHGP", [src, tgt], [hp_s, hp_t]).predict(Xq)
    est = mc_posterior_average(condition(hp_s, src), tgt, hp_t, Xq, 5000, 78)
    dev_mean = float(np.max(np.abs(est.mean - bhgp.mean) / est.se_mean))
    dev_var = float(
        np.max(np.abs(np.diag(est.covariance) - bhgp.variance) / est.se_variance)
    )
    mean_gap = float(np.max(np.abs(bhgp.mean - mhgp.mean)))
    ok = dev_mean <= 3.0 and dev_var <= 3.0 and mean_gap <= 1e-10
    assert report(
        "AC-3",
        ok,
        f"max mean dev {dev_mean:.2f} se, max var dev {dev_var:.2f} se, "
        f"BHGP-MHGP mean gap {mean_gap:.2e} (tol 1e-10)",
    )


def test_ac4_sampling_identity():
    """Lemma-style sampling identity on 20 random instances at 4 se."""
    rng = np.random.default_rng(404)
    worst_mean = worst_cov = 0.0
    all_passed = True
    for _ in range(20):
        p, q = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        mu = rng.standard_normal(p)
        L = rng.standard_normal((p, q))
        A = rng.standard_normal((p, p))
        rep = lemma1_check(mu, L, A @ A.T, 20_000, rng)
        all_passed &= rep.passed
        worst_mean = max(worst_mean, rep.max_mean_sigmas)
        worst_cov = max(worst_cov, rep.max_cov_sigmas)
    assert report(
        "AC-4",
        all_passed,
        f"20 instances, worst mean dev {worst_mean:.2f} se, "
        f"worst cov dev {worst_cov:.2f} se (tol 4 se)",
    )


def test_ac5_gradient_check():
    """Analytic marginal-likelihood gradient vs central differences."""
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(1, 4))
        n = int(rng.integers(2, 21))
        data = TaskDataset(rng.uniform(-2, 2, (n, dim)), rng.standard_normal(n))
        raw = rng.standard_normal(dim + 2)
        _, grad = log_marginal_likelihood(
            KernelHyperparams.from_raw_vector(raw, dim), data
        )
        h = 1e-5
        fd = np.zeros_like(grad)
        for i in range(raw.shape[0]):
            up, dn = raw.copy(), raw.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (
                log_marginal_likelihood(
                    KernelHyperparams.from_raw_vector(up, dim), data
                )[0]
                - log_marginal_likelihood(
                    KernelHyperparams.from_raw_vector(dn, dim), data
                )[0]
            ) / (2 * h)
        worst = max(worst, np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-10))
    ok = worst < 1e-4
    assert report("AC-5", ok, f"50 instances, worst relative error {worst:.2e} (tol 1e-4)")


def test_ac6_blocked_inversion_and_training_slopes():
    """Blocked solve vs dense solve, plus desk-scale training-step slopes."""
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(10):
        sizes = [int(rng.integers(4, 9)), int(rng.integers(4, 9))]
        n_t = int(rng.integers(2, 6))
        blocks = []
        for n in sizes:
            A = rng.standard_normal((n, n))
            blocks.append(A @ A.T + n * np.eye(n))
        B = rng.standard_normal((sum(sizes), n_t))
        D = rng.standard_normal((n_t, n_t))
        D = D @ D.T + (n_t + 10) * np.eye(n_t)
        K = np.zeros((sum(sizes) + n_t,) * 2)
        pos = 0
        for A in blocks:
            K[pos : pos + A.shape[0], pos : pos + A.shape[0]] = A
            pos += A.shape[0]
        K[:pos, pos:] = B
        K[pos:, :pos] = B.T
        K[pos:, pos:] = D
        v = rng.standard_normal(K.shape[0])
        op = block_inverse_wsgp(blocks, B, D)
        worst = max(worst, float(np.max(np.abs(op.solve(v) - np.linalg.solve(K, v)))))
    blocked_ok = worst <= 1e-8
    report("AC-6 (blocked vs dense)", blocked_ok, f"max |diff| {worst:.2e} (tol 1e-8)")

    bands = {"HGP": (2.5, 3.5), "SHGP": (1.5, 2.5), "MHGP": (0.7, 1.3)}
    _, slopes = timing_sweep(list(bands), [200, 400, 800, 1600], 100, 5, rng=0)
    slope_ok = True
    for kind, (lo, hi) in bands.items():
        inside = lo <= slopes[kind] <= hi
        slope_ok &= inside
        report(
            f"AC-6 (slope {kind})",
            inside,
            f"measured {slopes[kind]:.3f}, band [{lo}, {hi}]",
        )
    ordering = slopes["MHGP"] < slopes["SHGP"] < slopes["HGP"]
    report(
        "AC-6 (slope ordering)",
        ordering,
        ", ".join(f"{k}={v:.3f}" for k, v in slopes.items()),
    )
    assert blocked_ok and slope_ok


AC7_MODELS = ("GPBO", "HGP", "WSGP", "SHGP", "BHGP", "MHGP")


def test_ac7_branin_desk_scale_benchmark(tmp_path):
    """Desk-scale single-source regret benchmark on the Branin family.

    30 seeds instead of 50; asserts the qualitative claims: each jointly or
    sequentially Bayesian kind (HGP, WSGP, SHGP) ends below the no-transfer
    baseline by more than one pooled standard error, and the boosted model
    does not trail the mean-only transfer.
    """
    from transfer_bo.cli import main

    cfg_file = tmp_path / "branin.toml"
    cfg_file.write_text(
        "\n".join(
            [
                'benchmark = "branin"',
                "n_sources = 1",
                "points_per_source = 40",
                "sigma_source = 1.0",
                "sigma_target = 1.0",
                f"models = {list(AC7_MODELS)!r}".replace("'", '"'),
                "iterations = 30",
                "seeds = 30",
                f'output_dir = "{tmp_path / "out"}"',
                "n_restarts = 10",
            ]
        )
        + "\n"
    )
    assert main(["run", str(cfg_file), "--jobs", "2"]) == 0
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())["models"]

    final = {}
    for kind in AC7_MODELS:
        entry = summary[kind]
        assert entry["iterations"][-1] == 30
        assert entry["n_runs"] == 30
        final[kind] = (entry["mean_regret"][-1], entry["sem_regret"][-1])

    ok = True
    gp_mean, gp_sem = final["GPBO"]
    for kind in ("HGP", "WSGP", "SHGP"):
        mean, sem = final[kind]
        pooled = float(np.hypot(sem, gp_sem))
        inside = mean < gp_mean - pooled
        ok &= inside
        report(
            f"AC-7 ({kind} vs GPBO)",
            inside,
            f"{kind} {mean:.4f}±{sem:.4f} vs GPBO {gp_mean:.4f}±{gp_sem:.4f}, "
            f"pooled se {pooled:.4f}",
        )
    bh_mean, _ = final["BHGP"]
    mh_mean, _ = final["MHGP"]
    boosted_ok = bh_mean <= mh_mean
    ok &= boosted_ok
    report(
        "AC-7 (BHGP <= MHGP)",
        boosted_ok,
        f"BHGP {bh_mean:.4f} vs MHGP {mh_mean:.4f}",
    )
    assert ok


def _fig1_alpine_data():
    """Visualization instance: slope-family alpine, source on the left half."""

    def f(x, c):
        return x * np.sin(x + np.pi) + c * x

    rng = np.random.default_rng(808)
    Xs = rng.uniform(-10.0, 0.0, (20, 1))
    ys = f(Xs[:, 0], +0.5) + 0.1 * rng.standard_normal(20)
    Xt = np.array([[1.0], [2.0], [3.0], [4.0]])
    yt = f(Xt[:, 0], -0.5) + 0.1 * rng.standard_normal(4)
    return TaskDataset(Xs, ys, 0), TaskDataset(Xt, yt, 1)


def test_ac8_visualization_instance_uncertainty():
    """Mean-only transfer underestimates right-side uncertainty relative to
    the sequential model; the boost never shrinks below the mean-only model."""
    src, tgt = _fig1_alpine_data()
    models = {
        kind: train_sequential(kind, [src], tgt, rng=42, n_restarts=10)
        for kind in ("SHGP", "BHGP", "MHGP")
    }
    x_probe = np.array([[8.0]])
    std = {
        kind: float(np.sqrt(m.predict(x_probe).variance[0]))
        for kind, m in models.items()
    }
    narrower = std["MHGP"] < std["SHGP"]
    report(
        "AC-8 (MHGP std < SHGP std at x=8)",
        narrower,
        f"MHGP {std['MHGP']:.3f} vs SHGP {std['SHGP']:.3f}",
    )
    grid = np.arange(1.0, 10.0)[:, None]
    bh = np.sqrt(models["BHGP"].predict(grid).variance)
    mh = np.sqrt(models["MHGP"].predict(grid).variance)
    boosted = bool(np.all(bh + 1e-12 >= mh))
    report(
        "AC-8 (BHGP std >= MHGP std on 1..9)",
        boosted,
        f"min margin {float(np.min(bh - mh)):.2e}",
    )
    assert narrower and boosted


def test_ac9_degenerate_equivalences():
    rng = np.random.default_rng(909)
    src, tgt, hp_s, hp_t = random_transfer_instance(rng)
    empty = TaskDataset.empty(1, 1)
    Xq = rng.uniform(-3, 3, (6, 1))

    shgp0 = make_sequential_model("SHGP", [src, empty], [hp_s, hp_t]).predict(Xq)
    bhgp0 = make_sequential_model("BHGP", [src, empty], [hp_s, hp_t]).predict(Xq)
    dev_empty = max(
        float(np.max(np.abs(shgp0.mean - bhgp0.mean))),
        float(np.max(np.abs(shgp0.covariance - bhgp0.covariance))),
    )
    ok_empty = dev_empty <= 1e-8
    report("AC-9 (empty target SHGP == BHGP)", ok_empty, f"max |diff| {dev_empty:.2e}")

    hp_sure = KernelHyperparams.from_constrained(1e-12, [1.0], 1e-12)
    preds = {
        kind: make_sequential_model(kind, [src, tgt], [hp_sure, hp_t]).predict(Xq)
        for kind in ("SHGP", "BHGP", "MHGP")
    }
    dev_zero = 0.0
    for kind in ("BHGP", "MHGP"):
        dev_zero = max(
            dev_zero,
            float(np.max(np.abs(preds["SHGP"].mean - preds[kind].mean))),
            float(np.max(np.abs(preds["SHGP"].covariance - preds[kind].covariance))),
        )
    ok_zero = dev_zero <= 1e-8
    report(
        "AC-9 (zero source covariance SHGP == BHGP == MHGP)",
        ok_zero,
        f"max |diff| {dev_zero:.2e}",
    )

    wsgp = make_wsgp_model([src, tgt], [hp_s, hp_t], np.zeros(1)).predict(Xq)
    plain = condition(hp_t, tgt).predict(Xq)
    dev_w = max(
        float(np.max(np.abs(wsgp.mean - plain.mean))),
        float(np.max(np.abs(wsgp.covariance - plain.covariance))),
    )
    ok_w = dev_w <= 1e-10
    report("AC-9 (WSGP w=0 == GPBO)", ok_w, f"max |diff| {dev_w:.2e}")
    assert ok_empty and ok_zero and ok_w
