"""End-to-end acceptance battery.

Each test exercises one library-level guarantee on realistic workloads and
records a single PASS/FAIL verdict through the ``criterion_log`` fixture;
the verdicts are printed together in the terminal summary.  Numeric
thresholds (tolerances, success counts, runtime budgets) are part of the
guarantee being checked, so every test asserts them directly.
"""

import time

import numpy as np
import pytest
from scipy import integrate, stats

from wdmix import (
    AvConfig,
    ComponentTag,
    FitConfig,
    GaussianComponent,
    MixtureModel,
    MmlConfig,
    Responsibilities,
    WeightMode,
    WeightState,
    classify_components,
    contaminate_uniform,
    correct_detection,
    davies_bouldin,
    em_fixed,
    em_weighted,
    gamma_priors_from_weights,
    generate_sim,
    kmeans,
    knn_kernel_weights,
    micro_f1,
    model_from_labels,
    model_from_parameters,
    outlier_score_report,
    pipeline_gamma_priors,
    select_model,
    truncated_proportions,
    validate_dataset,
    analyze_segment,
)
from wdmix.cli import main as cli_main
from wdmix.datagen import profile_parameters
from wdmix.densities import log_gamma_pdf, log_gaussian_scaled, log_pearson7
from wdmix.errors import AllAnnihilated

from reference_gmm import ReferenceGMM


def _separated_mixture(rng, n, d, k, spread):
    """Random Gaussian mixture sample with unit-scale covariances."""
    centers = spread * rng.standard_normal((k, d))
    covs = []
    for _ in range(k):
        a = 0.5 * rng.standard_normal((d, d))
        covs.append(a @ a.T + np.eye(d))
    labels = rng.integers(0, k, n)
    pts = np.empty((n, d))
    for j in range(k):
        idx = labels == j
        chol = np.linalg.cholesky(covs[j])
        pts[idx] = centers[j] + rng.standard_normal((int(idx.sum()), d)) @ chol.T
    return validate_dataset(pts), centers, covs


def test_criterion_1_unit_weights_reduce_to_plain_em(criterion_log):
    """With all weights equal to one, the fixed-weight algorithm must follow
    a textbook GMM-EM implementation parameter-for-parameter, iteration by
    iteration, on several shapes of data."""
    start = time.perf_counter()
    worst = 0.0
    shapes = [(1, 2), (1, 3), (2, 2), (2, 3), (5, 2)]
    for run, (d, k) in enumerate(shapes):
        rng = np.random.default_rng(100 + run)
        data, centers, covs = _separated_mixture(rng, 500, d, k, spread=40.0)
        init_means = centers + rng.normal(0.0, 1.0, centers.shape)
        init_covs = [np.eye(d) * float(np.trace(c)) / d for c in covs]
        props = np.full(k, 1.0 / k)
        model = model_from_parameters(init_means, init_covs, props)
        ref = ReferenceGMM(init_means, init_covs, props)
        for _ in range(8):
            eta = em_fixed.e_step(data, model, 1.0)
            model = em_fixed.m_step(data, eta, 1.0)
            ref.iterate(data.points)
            worst = max(worst, float(np.max(np.abs(model.proportions - ref.proportions))))
            for comp, mu, cov in zip(model.components, ref.means, ref.covariances):
                worst = max(worst, float(np.max(np.abs(comp.mean - mu))))
                worst = max(worst, float(np.max(np.abs(comp.full_covariance() - cov))))
    elapsed = time.perf_counter() - start
    passed = worst < 1e-10 and elapsed < 5.0
    criterion_log(
        1,
        "unit weights reduce to plain EM",
        passed,
        f"max parameter deviation {worst:.2e} over 5 datasets x 8 iterations "
        f"in {elapsed:.2f}s",
    )
    assert worst < 1e-10
    assert elapsed < 5.0


def test_criterion_2_marginal_density_matches_quadrature(criterion_log):
    """The closed-form heavy-tailed marginal of a Gaussian whose precision
    scale is gamma-distributed must agree with numerical integration over
    the scale to high relative accuracy."""
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 3))
        alpha = float(rng.uniform(0.5, 10.0))
        beta = float(rng.uniform(0.5, 10.0))
        mean = rng.normal(0.0, 3.0, d)
        a = rng.normal(0.0, 1.0, (d, d))
        comp = GaussianComponent(mean, a @ a.T + np.eye(d))
        x = mean + rng.normal(0.0, 2.0, d)
        closed = float(np.exp(log_pearson7(x, comp, alpha, beta)))
        upper = float(stats.gamma.ppf(1.0 - 1e-12, alpha, scale=1.0 / beta)) * 4.0 + 50.0

        def integrand(w):
            return float(np.exp(log_gaussian_scaled(x, comp, w) + log_gamma_pdf(w, alpha, beta)))

        numeric, _ = integrate.quad(integrand, 0.0, upper, limit=200)
        worst = max(worst, abs(closed - numeric) / numeric)
    elapsed = time.perf_counter() - start
    passed = worst < 1e-6 and elapsed < 30.0
    criterion_log(
        2,
        "marginal density matches quadrature",
        passed,
        f"worst relative error {worst:.2e} over 100 random instances in {elapsed:.1f}s",
    )
    assert worst < 1e-6
    assert elapsed < 30.0


def test_criterion_3_objectives_ascend_monotonically(criterion_log):
    """Both fitting algorithms must produce non-decreasing objective traces
    (log-likelihood for fixed weights, marginal log-likelihood for random
    weights) on every dataset in a mixed battery, up to floating-point
    slack."""
    rng = np.random.default_rng(314)
    battery = []
    for d, k in ((1, 2), (2, 3), (3, 2)):
        data, _, _ = _separated_mixture(rng, 400, d, k, spread=6.0)
        battery.append((data, k, rng.uniform(0.5, 4.0, 400)))
    for profile, frac in (("easy", 0.0), ("easy", 0.3), ("mixed", 0.0), ("mixed", 0.3)):
        base = generate_sim(profile, 600, seed=500 + int(frac * 10))
        data = contaminate_uniform(base, frac, seed=600 + int(frac * 10))
        battery.append((data, 5, knn_kernel_weights(data)))

    config = FitConfig(max_iter=400, rel_tol=1e-9)
    worst_step = np.inf
    traces = 0
    steps = 0
    for data, k, weights in battery:
        labels, _ = kmeans(data, k, restarts=4, seed=1)
        init = model_from_labels(data, labels)
        priors = pipeline_gamma_priors(weights)
        for trace in (
            em_fixed.fit(data, init, weights, config).objective_trace,
            em_weighted.fit(data, init, priors, config).objective_trace,
        ):
            trace = np.asarray(trace)
            scale = np.maximum(1.0, np.abs(trace[:-1]))
            normalized = np.diff(trace) / scale
            worst_step = min(worst_step, float(normalized.min()))
            traces += 1
            steps += len(trace) - 1
    passed = worst_step >= -1e-8
    criterion_log(
        3,
        "objective traces never decrease",
        passed,
        f"worst normalized step {worst_step:.2e} over {traces} traces / {steps} updates",
    )
    assert passed


def _replace_component(model, j, mean=None, cov=None):
    comps = list(model.components)
    base = comps[j]
    comps[j] = GaussianComponent(
        base.mean if mean is None else mean,
        base.full_covariance() if cov is None else cov,
    )
    return MixtureModel(tuple(comps), model.proportions, model.covariance_shape)


def _max_abs_gradient(objective, model):
    """Largest central-difference derivative of the objective at ``model``
    with respect to every mean coordinate and covariance entry."""
    worst = 0.0
    for j, comp in enumerate(model.components):
        mu = comp.mean
        for i in range(mu.shape[0]):
            h = 1e-5 * (1.0 + abs(float(mu[i])))
            lo, hi = mu.copy(), mu.copy()
            lo[i] -= h
            hi[i] += h
            g = (
                objective(_replace_component(model, j, mean=hi))
                - objective(_replace_component(model, j, mean=lo))
            ) / (2.0 * h)
            worst = max(worst, abs(g))
        cov = comp.full_covariance()
        d = cov.shape[0]
        for r in range(d):
            for c in range(r, d):
                h = 1e-5 * (1.0 + abs(float(cov[r, c])))
                bump = np.zeros_like(cov)
                bump[r, c] = h
                bump[c, r] = h
                g = (
                    objective(_replace_component(model, j, cov=cov + bump))
                    - objective(_replace_component(model, j, cov=cov - bump))
                ) / (2.0 * h)
                worst = max(worst, abs(g))
    return worst


def test_criterion_4_m_step_is_stationary(criterion_log):
    """The closed-form parameter updates must sit at a stationary point of
    the expected complete-data objective they maximize, with the
    responsibilities (and posterior weight means) frozen at their E-step
    values."""
    rng = np.random.default_rng(99)
    pts = np.vstack(
        [
            rng.normal((0.0, 0.0), 1.0, (17, 2)),
            rng.normal((6.0, 0.0), 1.5, (17, 2)),
            rng.normal((0.0, 6.0), 0.8, (16, 2)),
        ]
    )
    data = validate_dataset(pts)
    labels, _ = kmeans(data, 3, restarts=4, seed=0)
    model0 = model_from_labels(data, labels)
    weights = rng.uniform(0.5, 3.0, 50)

    eta = em_fixed.e_step(data, model0, weights)
    updated = em_fixed.m_step(data, eta, weights)
    grad_fixed = _max_abs_gradient(
        lambda m: em_fixed.expected_complete_loglik(data, m, eta, weights), updated
    )

    state = WeightState.random_prior(*gamma_priors_from_weights(weights))
    eta_r = em_weighted.e_step_assignments(data, model0, state)
    state_post = em_weighted.e_step_weights(data, model0, state)
    updated_r = em_weighted.m_step(data, eta_r, state_post)
    grad_random = _max_abs_gradient(
        lambda m: em_weighted.expected_complete_loglik(data, m, eta_r, state_post),
        updated_r,
    )

    passed = grad_fixed < 1e-4 and grad_random < 1e-4
    criterion_log(
        4,
        "M-step updates are stationary points",
        passed,
        f"max |finite-difference gradient| fixed {grad_fixed:.2e}, "
        f"random {grad_random:.2e}",
    )
    assert grad_fixed < 1e-4
    assert grad_random < 1e-4


def _db_of(report, points):
    """Davies-Bouldin of a fit over all points, empty components dropped."""
    hard = report.final_responsibilities.hard_assignments()
    present = np.unique(hard)
    relabeled = np.searchsorted(present, hard)
    centers = np.vstack([report.final_model.components[j].mean for j in present])
    return davies_bouldin(points, relabeled, centers)


def test_criterion_5_order_recovery_and_cluster_quality(criterion_log):
    """On five-cluster data the random-weight selection pipeline must
    recover the true component count in most runs even under heavy uniform
    contamination, and its partitions must beat fixed-weight and unweighted
    pipelines on Davies-Bouldin in most contaminated runs."""
    start = time.perf_counter()
    recovery = {0.0: 0, 0.3: 0, 0.5: 0}
    beats_fixed = {0.3: 0, 0.5: 0}
    beats_unweighted = {0.3: 0, 0.5: 0}
    for i in range(20):
        base = generate_sim("easy", 600, seed=1000 + i)
        for frac in (0.0, 0.3, 0.5):
            data = contaminate_uniform(base, frac, seed=2000 + i)
            wd = select_model(data, MmlConfig(k_high=15), seed=i)
            if wd.final_model.n_components == 5:
                recovery[frac] += 1
            if frac == 0.0:
                continue
            kernel = knn_kernel_weights(data)
            fwd = select_model(
                data,
                MmlConfig(k_high=15, weight_mode=WeightMode.FIXED),
                weights=kernel,
                seed=i,
            )
            gmm = select_model(
                data,
                MmlConfig(k_high=15, weight_mode=WeightMode.FIXED),
                weights=np.ones(data.n),
                seed=i,
            )
            db_wd = _db_of(wd, data.points)
            if db_wd < _db_of(fwd, data.points):
                beats_fixed[frac] += 1
            if db_wd < _db_of(gmm, data.points):
                beats_unweighted[frac] += 1
    elapsed = time.perf_counter() - start
    passed = (
        recovery[0.0] >= 18
        and recovery[0.3] >= 16
        and recovery[0.5] >= 14
        and all(v >= 16 for v in beats_fixed.values())
        and all(v >= 16 for v in beats_unweighted.values())
        and elapsed < 600.0
    )
    criterion_log(
        5,
        "order recovery and partition quality under contamination",
        passed,
        f"true K in {recovery[0.0]}/{recovery[0.3]}/{recovery[0.5]} of 20 at "
        f"0/30/50% contamination; DB wins vs fixed-weight "
        f"{beats_fixed[0.3]},{beats_fixed[0.5]} and vs unweighted "
        f"{beats_unweighted[0.3]},{beats_unweighted[0.5]} of 20 at 30/50%; "
        f"{elapsed:.0f}s",
    )
    assert recovery[0.0] >= 18 and recovery[0.3] >= 16 and recovery[0.5] >= 14
    assert all(v >= 16 for v in beats_fixed.values())
    assert all(v >= 16 for v in beats_unweighted.values())
    assert elapsed < 600.0


def test_criterion_6_weight_posteriors_flag_outliers(criterion_log):
    """After a random-weight fit on contaminated data, planted outliers must
    receive lower marginal posterior weight means than inliers on average in
    every run, and rank them with AUC above 0.9 in nearly all runs, across
    all data profiles."""
    details = []
    all_separated = True
    all_auc_ok = True
    for profile in ("easy", "unbalanced", "overlapped", "mixed"):
        k_true = profile_parameters(profile)[0].shape[0]
        separated = 0
        good_auc = 0
        worst_auc = 1.0
        for i in range(20):
            base = generate_sim(profile, 600, seed=3000 + i)
            data = contaminate_uniform(base, 0.3, seed=4000 + i)
            labels, _ = kmeans(data, k_true, restarts=10, seed=i)
            init = model_from_labels(data, labels)
            priors = pipeline_gamma_priors(knn_kernel_weights(data))
            report = em_weighted.fit(data, init, priors, FitConfig(max_iter=400, rel_tol=1e-6))
            score = outlier_score_report(report.final_weights, data.outlier_flag)
            if score.outlier_mean_weight < score.inlier_mean_weight:
                separated += 1
            if score.auc > 0.9:
                good_auc += 1
            worst_auc = min(worst_auc, score.auc)
        all_separated = all_separated and separated == 20
        all_auc_ok = all_auc_ok and good_auc >= 18
        details.append(f"{profile}: means {separated}/20, AUC>0.9 {good_auc}/20 (min {worst_auc:.3f})")
    passed = all_separated and all_auc_ok
    criterion_log(6, "weight posteriors separate outliers", passed, "; ".join(details))
    assert passed, "; ".join(details)


def test_criterion_7_proportion_truncation_arithmetic(criterion_log):
    """The truncated proportion update must subtract half the per-component
    parameter count from each responsibility mass, clamp at zero, and
    renormalize — matching hand arithmetic exactly, zeroing components at
    the boundary, and failing loudly when nothing survives."""
    # (responsibility sums, per-component parameter count, hand result)
    cases = [
        ((10.0, 0.5, 4.0), 5, (0.8333333333333334, 0.0, 0.16666666666666666)),
        ((2.5, 10.0, 4.0), 5, (0.0, 0.8333333333333334, 0.16666666666666666)),
        ((6.0, 6.0), 4, (0.5, 0.5)),
        ((100.0, 200.0, 300.0), 2, (0.1658291457286432, 0.3333333333333333, 0.5008375209380235)),
        ((1.0, 2.0, 3.0, 4.0), 2, (0.0, 0.16666666666666666, 0.3333333333333333, 0.5)),
        ((5.0,), 4, (1.0,)),
        ((0.75, 0.75, 10.0), 3, (0.0, 0.0, 1.0)),
        ((7.0, 11.0, 13.0, 17.0), 14, (0.0, 0.2, 0.3, 0.5)),
        ((1e6, 1.0, 1e6), 2, (0.5, 0.0, 0.5)),
        ((30.0, 10.0001, 25.0), 20, (0.5714269387801749, 2.8571346939008747e-06, 0.4285702040851312)),
    ]
    worst = 0.0
    for sums, m, expected in cases:
        result = truncated_proportions(np.array(sums), m)
        worst = max(worst, float(np.max(np.abs(result - np.array(expected)))))

    boundary = truncated_proportions(np.array([2.5, 10.0, 4.0]), 5)
    boundary_zeroed = boundary[0] == 0.0

    raised = False
    try:
        truncated_proportions(np.array([3.0, 3.0]), 6)
    except AllAnnihilated:
        raised = True

    passed = worst <= 1e-12 and boundary_zeroed and raised
    criterion_log(
        7,
        "proportion truncation matches hand arithmetic",
        passed,
        f"10 hand cases within {worst:.1e}; boundary mass zeroed exactly; "
        "all-zero case raises",
    )
    assert worst <= 1e-12
    assert boundary_zeroed
    assert raised


def test_criterion_8_metric_values_and_invariances(criterion_log):
    """The evaluation metrics must reproduce closed-form values exactly and
    respect their symmetries: Davies-Bouldin is invariant to rigid motions,
    micro-F1 to renaming cluster or class labels."""
    pts = np.array([[-1.0], [1.0], [3.0], [5.0]])
    db_exact = davies_bouldin(pts, np.array([0, 0, 1, 1]), np.array([[0.0], [4.0]]))
    db_value_ok = abs(db_exact - 0.5) < 1e-12

    f1_perm = micro_f1(np.array([2, 0, 1, 2, 0, 1]), np.array([0, 1, 2, 0, 1, 2]))
    f1_value_ok = f1_perm == 1.0

    rng = np.random.default_rng(77)
    db_dev = 0.0
    f1_dev = 0.0
    for _ in range(50):
        points = rng.normal(0.0, 5.0, (60, 2))
        labels = rng.integers(0, 3, 60)
        labels[:3] = (0, 1, 2)  # keep every cluster populated
        centers = rng.normal(0.0, 5.0, (3, 2))
        base = davies_bouldin(points, labels, centers)
        q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
        shift = rng.normal(0.0, 10.0, 2)
        moved = davies_bouldin(points @ q.T + shift, labels, centers @ q.T + shift)
        db_dev = max(db_dev, abs(moved - base))

        true = rng.integers(0, 3, 60)
        pred = rng.integers(0, 3, 60)
        base_f1 = micro_f1(pred, true)
        sigma = rng.permutation(3)
        tau = rng.permutation(3)
        f1_dev = max(f1_dev, abs(micro_f1(sigma[pred], true) - base_f1))
        f1_dev = max(f1_dev, abs(micro_f1(pred, tau[true]) - base_f1))

    passed = db_value_ok and f1_value_ok and db_dev < 1e-9 and f1_dev == 0.0
    criterion_log(
        8,
        "metric values and invariances",
        passed,
        f"DB analytic case dev {abs(db_exact - 0.5):.1e}; permuted-perfect F1 "
        f"{f1_perm}; 50 rigid motions dev {db_dev:.1e}; 50 relabelings dev {f1_dev:.1e}",
    )
    assert db_value_ok
    assert f1_value_ok
    assert db_dev < 1e-9
    assert f1_dev == 0.0


def _two_speaker_segment(seed):
    """Speaker A emits audio and is visible; B is a silent visible object."""
    gen = np.random.default_rng(seed)
    audio = gen.normal([-60.0, 0.0], 10.0, size=(50, 2))
    visual_a = gen.normal([-60.0, 0.0], 10.0, size=(30, 2))
    visual_b = gen.normal([60.0, 0.0], 10.0, size=(40, 2))
    pts = np.vstack([audio, visual_a, visual_b])
    tags = np.array(["a"] * 50 + ["v"] * 70)
    order = gen.permutation(120)
    return validate_dataset(pts[order], modality=tags[order])


def test_criterion_9_cross_modal_tagging_and_detection(criterion_log):
    """Component relevance must match its hand-counted definition, tags must
    partition components consistently with the relevance threshold, and the
    full segment pipeline must locate the active speaker in every seeded
    two-speaker scene."""
    # Hand-counted relevance: component 0 owns 20 of 40 audio and 5 of 10
    # visual points, so min(20, 5) / 50 = 0.1 and it is tagged audio-visual.
    modality = np.array(["a"] * 40 + ["v"] * 10)
    eta = np.zeros((50, 3))
    eta[:20, 0] = 1.0
    eta[40:45, 0] = 1.0
    eta[20:40, 1] = 1.0
    eta[45:, 2] = 1.0
    tags, relevance = classify_components(Responsibilities(eta), modality, threshold=0.05)
    worked_ok = (
        abs(relevance[0] - 0.1) < 1e-12
        and tags[0] is ComponentTag.AUDIO_VISUAL
        and tags[1] is ComponentTag.AUDIO_ONLY
        and tags[2] is ComponentTag.VISUAL_ONLY
    )

    rng = np.random.default_rng(5)
    partition_ok = True
    for _ in range(10):
        raw = rng.random((40, 4))
        soft = Responsibilities(raw / raw.sum(axis=1, keepdims=True))
        mods = np.where(rng.random(40) < 0.5, "a", "v")
        mods[:2] = ("a", "v")
        rand_tags, rand_rel = classify_components(soft, mods)
        for tag, rel in zip(rand_tags, rand_rel):
            if rel >= 0.05:
                partition_ok = partition_ok and tag is ComponentTag.AUDIO_VISUAL
            else:
                partition_ok = partition_ok and tag in (
                    ComponentTag.AUDIO_ONLY,
                    ComponentTag.VISUAL_ONLY,
                )

    detected = 0
    for seed in range(20):
        segment = _two_speaker_segment(seed)
        result = analyze_segment(segment, AvConfig(seed=seed))
        if correct_detection([-60.0, 0.0], result.model, result.tags):
            detected += 1

    passed = worked_ok and partition_ok and detected == 20
    criterion_log(
        9,
        "cross-modal tagging and speaker detection",
        passed,
        f"hand relevance case {'ok' if worked_ok else 'FAILED'}; tag/threshold "
        f"partition on 10 random segments {'ok' if partition_ok else 'FAILED'}; "
        f"active speaker found in {detected}/20 seeded scenes",
    )
    assert worked_ok
    assert partition_ok
    assert detected == 20


def _run_cli_pipeline(dirpath):
    """Generate, fit, select, and evaluate into ``dirpath``; return the
    artifact names."""
    data = dirpath / "data.csv"
    assert cli_main([
        "generate", "--profile", "easy", "--n", "200",
        "--outlier-fraction", "0.3", "--seed", "5", "--out", str(data),
    ]) == 0
    fit_prefix = dirpath / "fit"
    assert cli_main([
        "fit", "--input", str(data), "--algorithm", "wd", "--k", "5",
        "--seed", "3", "--tol", "1e-6", "--out", str(fit_prefix),
    ]) == 0
    select_prefix = dirpath / "sel"
    assert cli_main([
        "select", "--input", str(data), "--k-high", "8", "--seed", "4",
        "--out", str(select_prefix),
    ]) == 0
    assert cli_main([
        "evaluate", "--model", f"{fit_prefix}.model.json",
        "--assignments", f"{fit_prefix}.assignments.csv",
        "--truth", str(data), "--metrics", "db,f1,outliers",
        "--report", f"{fit_prefix}.report.json",
        "--plot", str(dirpath / "plot.svg"), "--out", str(dirpath / "metrics.json"),
    ]) == 0
    return sorted(p.name for p in dirpath.iterdir())


def test_criterion_10_seeded_runs_are_byte_identical(criterion_log):
    """Running the full command-line pipeline twice with the same seeds must
    produce byte-identical artifacts: data, models, reports, assignments,
    metrics, and plots."""
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as tmp:
        first = Path(tmp) / "first"
        second = Path(tmp) / "second"
        first.mkdir()
        second.mkdir()
        names_first = _run_cli_pipeline(first)
        names_second = _run_cli_pipeline(second)
        same_names = names_first == names_second
        diffs = [
            name
            for name in names_first
            if (first / name).read_bytes() != (second / name).read_bytes()
        ]
    passed = same_names and not diffs
    criterion_log(
        10,
        "seeded pipelines are byte-identical",
        passed,
        f"{len(names_first)} artifacts compared; mismatches: {diffs if diffs else 'none'}",
    )
    assert same_names
    assert not diffs
