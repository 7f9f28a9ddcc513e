"""Acceptance criteria A1-A11.

Each test records one PASS/FAIL line that is repeated in the terminal summary.
The end-to-end criteria (A6, A7, A9, A10) train full models and are marked
slow; together they take a few minutes on one core.
"""

import json
import math
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import special

from npcal.cli import main
from npcal.data import Dataset, PredictionSet, SyntheticSpec, generate_gaussian_mixture
from npcal.harness import build_config, run_pipeline
from npcal.mathcore import kl_multigamma, make_rng, uniform_open
from npcal.noise import ASN_MAPS, inject_asymmetric, inject_idn, inject_sridn, inject_symmetric, sridn_flip_count
from npcal.npc import NpcModel, elbo_and_grads, elbo_terms, posterior_mode
from npcal.transition import h_from_t, solve_t_instance

SEEDS = (0, 1, 2)


def test_a1_kl_against_monte_carlo(acceptance_log):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    draws = 10**6
    for _ in range(50):
        c = int(rng.integers(2, 7))
        a_hat = rng.uniform(0.5, 20.0, c)
        a = rng.uniform(0.5, 20.0, c)
        # unit-rate gammas; log q - log p = sum (a_hat - a) ln z - lnG(a_hat) + lnG(a)
        log_z = np.log(rng.gamma(a_hat, 1.0, size=(draws, c)))
        mc = float(np.mean(log_z @ (a_hat - a))) + float(np.sum(special.gammaln(a) - special.gammaln(a_hat)))
        exact = float(kl_multigamma(a_hat, a))
        worst = max(worst, abs(exact - mc) / abs(mc))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and elapsed < 30
    acceptance_log("A1", ok, f"max relative error {worst:.2e} (<= 1e-2), {elapsed:.1f}s (< 30s)")
    assert ok


def _toy_model(seed):
    rng = make_rng(seed)
    c, n, d = 3, 5, 4
    model = NpcModel.initialise(d, c, (8, 8), rng)
    # nonzero biases keep pre-activations off the ReLU kink, where no derivative exists
    for b in model.encoder.biases + model.decoder.biases:
        b[:] = rng.uniform(-0.3, 0.3, b.shape)
    x = rng.standard_normal((n, d))
    probs = rng.dirichlet(np.ones(c), n)
    prior = rng.uniform(0.5, 11.0, (n, c))
    u = uniform_open(rng, (n, c))
    return model, x, probs, prior, u


def test_a2_elbo_gradients(acceptance_log):
    start = time.perf_counter()
    model, x, probs, prior, u = _toy_model(7)
    _, grads = elbo_and_grads(model, x, probs, prior, u)

    def loss():
        recon, kl = elbo_terms(model, x, probs, prior, u)
        return -np.mean(recon - kl)

    h, worst = 1e-6, 0.0
    for p, g in zip(model.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            down = loss()
            p[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-7))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed < 10
    acceptance_log("A2", ok, f"max relative gradient error {worst:.2e} (<= 1e-3), {elapsed:.1f}s")
    assert ok


def test_a3_mode_grid_oracle(acceptance_log):
    rng = np.random.default_rng(3)
    g = (np.arange(200) + 0.5) / 200
    x1, x2 = np.meshgrid(g, g, indexing="ij")
    inside = x1 + x2 < 1
    pts = np.stack([x1[inside], x2[inside], 1 - x1[inside] - x2[inside]], axis=1)
    log_pts = np.log(pts)
    worst = 0.0
    for _ in range(100):
        alpha = rng.uniform(1.1, 20.0, 3)
        best = pts[np.argmax(log_pts @ (alpha - 1))]
        worst = max(worst, float(np.max(np.abs(posterior_mode(alpha) - best))))
    ok = worst <= 0.01
    acceptance_log("A3", ok, f"L-inf distance to grid argmax {worst:.4f} (<= 0.01)")
    assert ok


def test_a4_transition_relation(acceptance_log):
    rng = np.random.default_rng(4)
    c = 3
    rel_err, rec_err, solved = 0.0, 0.0, 0
    for _ in range(100):
        p_y = rng.dirichlet(np.ones(c))
        t = rng.dirichlet(np.ones(c), c)
        q = rng.dirichlet(np.ones(c), c)  # p(pred | noisy)
        joint = p_y[:, None, None] * t[:, :, None] * q[None, :, :]  # [y, noisy, pred]
        p_pred = joint.sum(axis=(0, 1))
        h = joint.sum(axis=1).T / p_pred[:, None]
        a = q.T  # A[k, i] = p(pred = k | noisy = i)
        rel_err = max(rel_err, float(np.max(np.abs(h_from_t(t, p_y, p_pred, a) - h))))
        t_hat, ok = solve_t_instance(h, p_y, p_pred, a)
        if ok:
            solved += 1
            rec_err = max(rec_err, float(np.linalg.norm(t_hat - t)))
    ok = rel_err <= 1e-10 and rec_err <= 1e-8 and solved > 0
    acceptance_log(
        "A4", ok, f"relation error {rel_err:.1e} (<= 1e-10), recovery {rec_err:.1e} (<= 1e-8) on {solved} solvable joints"
    )
    assert ok


def test_a5_noise_generators(acceptance_log):
    n, c = 10**4, 10
    ds = generate_gaussian_mixture(SyntheticSpec(c, n, 8, 1.0, seed=5))
    y = ds.true_labels
    checks = []
    for tau in (0.2, 0.8):
        flips = int(np.sum(inject_symmetric(ds, tau, 11).noisy_labels != y))
        checks.append(abs(flips - n * tau) <= 3 * math.sqrt(n * tau * (1 - tau)))

    asn = inject_asymmetric(ds, 0.4, ASN_MAPS["mnist"], 12).noisy_labels
    changed = asn != y
    checks.append(set(np.unique(y[changed])) <= set(ASN_MAPS["mnist"]))
    checks.append(all(asn[changed & (y == s)].tolist() == [d] * int(np.sum(changed & (y == s))) for s, d in ASN_MAPS["mnist"].items()))

    idn = inject_idn(ds, 0.4, 13)
    keep = idn.per_instance_rows[np.arange(n), y]
    checks.append(bool(np.all(keep == 1 - idn.flip_rates)))
    checks.append(abs(float(np.mean(idn.flip_rates)) - 0.4) <= 0.03)

    probs = np.random.default_rng(14).dirichlet(np.ones(c), n)
    sr = inject_sridn(ds, 0.3, PredictionSet(probs)).noisy_labels
    k = math.ceil(n * 0.3)
    flipped = np.flatnonzero(sr != y)
    conf = probs.astype(np.float32).astype(np.float64)[np.arange(n), y]
    least = np.argsort(conf, kind="stable")[:k]
    checks.append(flipped.size == k == sridn_flip_count(n, 0.3) and set(flipped) == set(least))

    ok = all(checks)
    acceptance_log("A5", ok, f"{sum(checks)}/{len(checks)} generator checks hold")
    assert ok


# ------------------------------------------------------------------ end to end


def _default_run(seed, **values):
    return run_pipeline(build_config({"seed": str(seed), **values}))


@pytest.fixture(scope="module")
def idn_reports():
    return [_default_run(s, npc_iterations="2") for s in SEEDS]


@pytest.mark.slow
def test_a6_end_to_end_gain(idn_reports, acceptance_log):
    before = [r.accuracy_before for r in idn_reports]
    after = [r.accuracy_after for r in idn_reports]
    gain = 100 * (np.mean(after) - np.mean(before))
    ok = gain >= 3.0
    detail = ", ".join(f"{b:.3f}->{a:.3f}" for b, a in zip(before, after))
    acceptance_log("A6", ok, f"mean gain {gain:.1f} points (>= 3.0); per seed {detail}")
    assert ok


@pytest.mark.slow
def test_a7_no_harm_on_clean_labels(acceptance_log):
    # IDN at ratio 0 still flips labels (the truncated normal has positive
    # mean), so clean data is produced with zero symmetric noise
    reports = [_default_run(s, noise="SN", noise_ratio="0") for s in SEEDS]
    drops = [100 * (r.accuracy_before - r.accuracy_after) for r in reports]
    ok = all(d <= 0.5 for d in drops)
    detail = ", ".join(f"{r.accuracy_before:.3f}->{r.accuracy_after:.3f}" for r in reports)
    acceptance_log("A7", ok, f"largest drop {max(drops):.2f} points (<= 0.5); per seed {detail}")
    assert ok


@pytest.mark.slow
def test_a8_transition_recovery(acceptance_log):
    rep = _default_run(0, noise="SN", noise_ratio="0.2", estimate_t="true")
    diag = float(np.mean(np.diag(rep.t_estimate)))
    ok = rep.t_mse <= 0.02 and abs(diag - 0.8) <= 0.1
    acceptance_log(
        "A8",
        ok,
        f"MSE {rep.t_mse:.2e} (<= 0.02), diagonal mean {diag:.3f} (0.8 +- 0.1), excluded {rep.t_exclusion_rate:.3f}",
    )
    assert ok


@pytest.mark.slow
def test_a9_iteration_converges(idn_reports, acceptance_log):
    deltas = [100 * abs(r.iteration_accuracies[1] - r.iteration_accuracies[0]) for r in idn_reports]
    ok = max(deltas) <= 1.0
    acceptance_log("A9", ok, "iteration 2 vs 1 differences " + ", ".join(f"{d:.2f}" for d in deltas) + " points (<= 1.0)")
    assert ok


@pytest.mark.slow
def test_a10_cli_determinism(tmp_path, acceptance_log):
    paths = [tmp_path / f"report{i}.json" for i in range(2)]
    for path in paths:
        assert main(["pipeline", "--seed", "11", "--report", str(path), "--estimate-t", "true"]) == 0
    ok = paths[0].read_bytes() == paths[1].read_bytes()
    acceptance_log("A10", ok, f"two runs with seed 11 give byte-identical reports ({paths[0].stat().st_size} bytes)")
    assert ok


def _mnist_files():
    root = os.environ.get("NPCAL_MNIST_DIR")
    if not root:
        return None
    names = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    found = []
    for name in names:
        candidates = [Path(root) / name, Path(root) / (name + ".gz")]
        hit = next((p for p in candidates if p.exists()), None)
        if hit is None:
            return None
        found.append(str(hit))
    return found


@pytest.mark.slow
def test_a11_mnist(acceptance_log):
    files = _mnist_files()
    if files is None:
        acceptance_log("A11", True, "skipped: set NPCAL_MNIST_DIR to a directory with the four MNIST IDX files")
        pytest.skip("MNIST IDX files not available")
    rep = run_pipeline(
        build_config(
            {
                "seed": "0",
                "data": "idx",
                "idx_images": files[0],
                "idx_labels": files[1],
                "idx_test_images": files[2],
                "idx_test_labels": files[3],
                "n_classes": "10",
                "noise": "IDN",
                "noise_ratio": "0.4",
                "train_epochs": "20",
            }
        )
    )
    gain = 100 * (rep.accuracy_after - rep.accuracy_before)
    ok = gain >= 8.0
    acceptance_log("A11", ok, f"{rep.accuracy_before:.3f}->{rep.accuracy_after:.3f}, gain {gain:.1f} points (>= 8)")
    assert ok
