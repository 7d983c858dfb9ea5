"""Acceptance suite: one test per release gate, run with ``pytest -v``.

Each test states its tolerance and budget inline.  The two expensive gates
(selection ablation and its uncertainty-trend follow-up) share one desk-sized
sweep through a session fixture so the whole file stays inside its budgets.
"""

import json
import os
import time

import numpy as np
import pytest
from mpmath import mp

from p2lr.clusterer import kmeans
from p2lr.cli import main as cli_main
from p2lr.embedder import (
    EmbeddingModel,
    TeacherState,
    ema_update,
    selection_loss,
    selection_loss_grad,
)
from p2lr.evalkit import auroc
from p2lr.refinery import RefineryConfig, run_ablation
from p2lr.selector import (
    brute_force_selection,
    schedule_fraction,
    select_lowest,
    selection_objective,
    selection_threshold,
)
from p2lr.synthgen import corrupt_labels, generate_prototypes, sample_target
from p2lr.uncertainty import (
    classifier_probs,
    ideal_distribution,
    kl_divergence,
    kl_ideal_scores,
)
from p2lr._util import round_half_up

# Frozen 50-digit reference values, computed once with mpmath (mp.dps = 50).
#
# 0.3 + log(1 + (exp(1.5 * 0.7) - 1) / 2) / 1.5:
SCHEDULE_MIDPOINT = 0.73794086603846526120910704064317
# 0.99*log(0.99/0.2) + 4 * 0.0025*log(0.0025/0.2)  (peak 0.99 over 5 classes
# against the uniform distribution):
KL_PEAKED_VS_UNIFORM = 1.5395734344680541279603414927
# 0.999 ** 10000:
EMA_DECAY_10K = 4.5173345977048646135460989948e-5


def mp_kl(q, p) -> float:
    """Term-by-term KL(q || p) at 50 decimal digits."""
    mp.dps = 50
    total = mp.mpf(0)
    for qj, pj in zip(q, p):
        if qj > 0:
            total += mp.mpf(float(qj)) * mp.log(mp.mpf(float(qj)) / mp.mpf(float(pj)))
    return float(total)


@pytest.fixture(scope="session")
def desk_ablation():
    """kl_ideal vs none on the desk-sized default, seeds 0..9, timed once."""
    started = time.perf_counter()
    table = run_ablation(RefineryConfig.desk(), ("kl_ideal", "none"), tuple(range(10)))
    elapsed = time.perf_counter() - started
    return table, elapsed


def test_criterion_01_selection_solver_matches_brute_force():
    # 200 fixtures, N <= 15, threshold strictly between adjacent sorted
    # uncertainties; objective values must agree exactly, under 10 s.
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(200):
        n = int(rng.integers(2, 16))
        u = rng.uniform(0.0, 5.0, n)
        ordered = np.sort(u)
        gaps = np.flatnonzero(np.diff(ordered) > 1e-6)
        assert gaps.size > 0  # continuous draws; distinct with probability 1
        i = int(rng.choice(gaps))
        threshold = 0.5 * (ordered[i] + ordered[i + 1])
        assert ordered[i] < threshold < ordered[i + 1]
        count = i + 1  # entries strictly below the threshold

        closed = select_lowest(u, threshold, count)
        brute = brute_force_selection(u, threshold)
        np.testing.assert_array_equal(closed, brute)
        assert selection_objective(u, closed, threshold) == selection_objective(
            u, brute, threshold
        )
    assert time.perf_counter() - started < 10.0


def test_criterion_02_selected_count_matches_schedule():
    # 1000 randomized (scores, fraction) cases, ties included: the number of
    # selected samples must equal clamp(round(N * fraction), 1, N) every time.
    rng = np.random.default_rng(202)
    for case in range(1000):
        n = int(rng.integers(1, 300))
        if case % 10 == 0:
            u = np.full(n, float(rng.uniform(0.0, 3.0)))  # all-ties
        elif case % 3 == 0:
            u = rng.choice(rng.uniform(0.0, 2.0, max(2, n // 4)), size=n)
        else:
            u = rng.uniform(0.0, 2.0, n)
        if case % 7 == 0:
            fraction = (2 * int(rng.integers(0, n)) + 1) / (2 * n)  # exact .5 rounding
            fraction = min(max(fraction, 1e-9), 1.0)
        else:
            fraction = float(rng.uniform(1e-6, 1.0))
        threshold, count = selection_threshold(u, fraction)
        indicators = select_lowest(u, threshold, count)
        expected = min(max(round_half_up(n * fraction), 1), n)
        assert int(indicators.sum()) == expected


def test_criterion_03_schedule_endpoints_and_monotonicity():
    # 100 random (start, growth, horizon): endpoints within 1e-12, strictly
    # increasing at every integer step; fixed midpoint matches the 50-digit
    # reference within 1e-12.
    rng = np.random.default_rng(303)
    for _ in range(100):
        start = float(rng.uniform(0.01, 0.99))
        growth = float(rng.uniform(0.05, 8.0))
        horizon = int(rng.integers(1, 150))
        values = [schedule_fraction(t, horizon, start, growth) for t in range(horizon + 1)]
        assert abs(values[0] - start) <= 1e-12
        assert abs(values[-1] - 1.0) <= 1e-12
        assert all(b > a for a, b in zip(values, values[1:]))
    assert abs(schedule_fraction(50, 100, 0.3, 1.5) - SCHEDULE_MIDPOINT) <= 1e-12
    assert abs(schedule_fraction(15, 30, 0.3, 1.5) - SCHEDULE_MIDPOINT) <= 1e-12


def test_criterion_04_kl_matches_extended_precision():
    # 100 random pairs against the 50-digit oracle within 1e-10; KL(q, q)
    # at most 1e-12; the frozen peaked-vs-uniform case within 1e-9.
    rng = np.random.default_rng(404)
    for case in range(100):
        c = int(rng.integers(2, 12))
        q = rng.uniform(0.05, 1.0, c)
        p = rng.uniform(0.05, 1.0, c)
        q /= q.sum()
        p /= p.sum()
        if case % 5 == 0 and c > 2:
            q[int(rng.integers(0, c))] = 0.0  # zero-mass term contributes nothing
            q /= q.sum()
        assert abs(kl_divergence(q, p) - mp_kl(q, p)) <= 1e-10
        assert kl_divergence(q, q) <= 1e-12
    peaked = ideal_distribution(5, 2, 0.99)
    uniform = np.full(5, 0.2)
    assert abs(kl_divergence(peaked, uniform) - KL_PEAKED_VS_UNIFORM) <= 1e-9


def test_criterion_05_classifier_probs_are_scale_invariant_distributions():
    # 100 fixtures: every row sums to 1 within 1e-9 and is strictly positive;
    # rescaling the features by 1e-3 / 1 / 1e3 moves no entry by more than 1e-12.
    rng = np.random.default_rng(505)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        d = int(rng.integers(2, 10))
        c = int(rng.integers(2, 10))
        features = rng.standard_normal((n, d))
        centroids = rng.standard_normal((c, d))
        probs = classifier_probs(features, centroids, 20.0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-9)
        assert np.all(probs > 0)
        for scale in (1e-3, 1.0, 1e3):
            rescaled = classifier_probs(scale * features, centroids, 20.0)
            np.testing.assert_allclose(rescaled, probs, rtol=0, atol=1e-12)


def test_criterion_06_refinement_gradient_matches_finite_differences():
    # 20 seeded fixtures (N=20, c=5, d=4): analytic gradient vs central
    # differences at step 1e-5, relative error at most 1e-4 wherever either
    # side exceeds 1e-8 in magnitude, under 30 s.
    started = time.perf_counter()
    step = 1e-5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        raw = rng.standard_normal((20, 4))
        centroids = rng.standard_normal((5, 4))
        labels = rng.integers(0, 5, 20)
        indicators = rng.integers(0, 2, 20)
        indicators[0] = 1  # never empty
        model = EmbeddingModel(
            weights=np.eye(4) + 0.1 * rng.standard_normal((4, 4)),
            bias=0.1 * rng.standard_normal(4),
        )
        grad_w, grad_b = selection_loss_grad(
            model, raw, centroids, labels, indicators, 20.0, 0.99
        )

        def loss_at(weights, bias):
            probe = EmbeddingModel(weights=weights, bias=bias)
            return selection_loss(probe, raw, centroids, labels, indicators, 20.0, 0.99)

        numeric_w = np.zeros_like(grad_w)
        for i in range(4):
            for j in range(4):
                bump = np.zeros((4, 4))
                bump[i, j] = step
                numeric_w[i, j] = (
                    loss_at(model.weights + bump, model.bias)
                    - loss_at(model.weights - bump, model.bias)
                ) / (2 * step)
        numeric_b = np.zeros_like(grad_b)
        for i in range(4):
            bump = np.zeros(4)
            bump[i] = step
            numeric_b[i] = (
                loss_at(model.weights, model.bias + bump)
                - loss_at(model.weights, model.bias - bump)
            ) / (2 * step)

        for analytic, numeric in ((grad_w, numeric_w), (grad_b, numeric_b)):
            scale = np.maximum(np.abs(analytic), np.abs(numeric))
            checked = scale > 1e-8
            assert checked.any()
            rel = np.abs(analytic - numeric)[checked] / scale[checked]
            assert rel.max() <= 1e-4
    assert time.perf_counter() - started < 30.0


def test_criterion_07_kmeans_descends_and_converges_to_means():
    # 50 fixtures: the recorded inertia never increases across Lloyd
    # iterations and every returned centroid equals its member mean within
    # 1e-9; a two-blob layout is recovered exactly.
    rng = np.random.default_rng(707)
    for case in range(50):
        n = int(rng.integers(5, 120))
        d = int(rng.integers(2, 8))
        k = int(rng.integers(1, min(n, 12) + 1))
        features = rng.standard_normal((n, d))
        if case % 5 == 0:
            features[: n // 2] = features[0]  # heavy duplication stresses ties
        model = kmeans(features, k, seed=case)
        history = np.asarray(model.inertia_history)
        assert np.all(np.diff(history) <= 0)
        for j in range(k):
            members = features[model.assignments == j]
            assert members.shape[0] > 0
            np.testing.assert_allclose(
                model.centroids[j], members.mean(axis=0), rtol=0, atol=1e-9
            )

    square = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    blobs = np.vstack([square, square + 10.0])
    model = kmeans(blobs, 2, seed=0)
    recovered = model.centroids[np.argsort(model.centroids[:, 0])]
    np.testing.assert_array_equal(recovered, [[0.5, 0.5], [10.5, 10.5]])


def test_criterion_08_uncertainty_separates_corrupted_labels():
    # Default generator, 20% corrupted pseudo-labels, first-step scores:
    # corrupted samples score higher on average in at least 9 of 10 seeds and
    # the mean AUROC beats 0.8, under 60 s.
    started = time.perf_counter()
    wins = 0
    aurocs = []
    for seed in range(10):
        prototypes = generate_prototypes(20, 16, 1.0, seed)
        target = sample_target(prototypes, 30, 0.1, 0.2, seed + 1)
        features = target.raw_features  # identity teacher on the first step
        cluster = kmeans(features, 20, seed=seed + 1000)
        labels, mask = corrupt_labels(cluster.assignments, 0.2, 20, seed + 100000)
        scores = kl_ideal_scores(features, labels, cluster.centroids, 20.0, 0.99)
        if scores[mask].mean() > scores[~mask].mean():
            wins += 1
        aurocs.append(auroc(scores, mask))
    assert wins >= 9
    assert float(np.mean(aurocs)) > 0.8
    assert time.perf_counter() - started < 60.0


def test_criterion_09_kl_selection_beats_no_selection(desk_ablation):
    # Desk-sized sweep over {kl_ideal, none} x seeds 0..9: the uncertainty-
    # guided arm matches or beats the select-everything arm on both mean
    # final purity and mean final retrieval mAP, under 10 minutes.
    table, elapsed = desk_ablation
    assert elapsed < 600.0
    guided = table.row("kl_ideal")
    baseline = table.row("none")
    assert guided["n_seeds"] == 10 and baseline["n_seeds"] == 10
    assert guided["purity_mean"] >= baseline["purity_mean"]
    assert guided["map_mean"] >= baseline["map_mean"]


def test_criterion_10_selected_uncertainty_drops_over_run(desk_ablation):
    # Same sweep, kl_ideal arm: the mean uncertainty of the selected set at
    # the final step is below its first-step value in at least 9 of 10 seeds.
    table, _ = desk_ablation
    cells = [c for c in table.cells if c["criterion"] == "kl_ideal"]
    assert len(cells) == 10
    drops = sum(
        1
        for c in cells
        if c["summary"]["final_mean_score_selected"]
        < c["summary"]["initial_mean_score_selected"]
    )
    assert drops >= 9


def test_criterion_11_report_bytes_independent_of_thread_env(tmp_path, monkeypatch, capsys):
    # The same run command with different P2LR_THREADS settings must write a
    # byte-identical report.
    config_path = str(tmp_path / "config.json")
    with open(config_path, "w") as fh:
        json.dump(
            {"version": 1, "c_true": 6, "d": 8, "n_per_id": 8, "n_steps": 4,
             "corrupt_fraction": 0.1, "seed": 3},
            fh,
        )
    out_dir = str(tmp_path / "run")
    report_path = os.path.join(out_dir, "report.json")

    monkeypatch.setenv("P2LR_THREADS", "1")
    assert cli_main(["run", "--config", config_path, "--out", out_dir]) == 0
    with open(report_path, "rb") as fh:
        first = fh.read()

    monkeypatch.setenv("P2LR_THREADS", "7")
    assert cli_main(["run", "--config", config_path, "--out", out_dir]) == 0
    with open(report_path, "rb") as fh:
        second = fh.read()

    assert first == second


def test_criterion_12_teacher_ema_converges_to_fixed_student():
    # momentum 0.999 against a fixed student: within 1e-4 of the student
    # after 10000 updates, and within 1e-9 of the closed-form decay.
    rng = np.random.default_rng(12)
    d = 6
    student = EmbeddingModel(
        weights=rng.uniform(-1.0, 1.0, (d, d)), bias=rng.uniform(-1.0, 1.0, d)
    )
    start_w = rng.uniform(-1.0, 1.0, (d, d))
    start_b = rng.uniform(-1.0, 1.0, d)
    teacher = TeacherState(weights=start_w.copy(), bias=start_b.copy(), momentum=0.999)
    for _ in range(10_000):
        teacher = ema_update(teacher, student)

    assert np.abs(teacher.weights - student.weights).max() <= 1e-4
    assert np.abs(teacher.bias - student.bias).max() <= 1e-4

    expected_w = student.weights + (start_w - student.weights) * EMA_DECAY_10K
    expected_b = student.bias + (start_b - student.bias) * EMA_DECAY_10K
    np.testing.assert_allclose(teacher.weights, expected_w, rtol=0, atol=1e-9)
    np.testing.assert_allclose(teacher.bias, expected_b, rtol=0, atol=1e-9)
