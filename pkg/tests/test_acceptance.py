"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are printed together in the pytest terminal summary.
"""
import math
import time

import numpy as np
import pytest

from convexity_lab.data import TeacherSpec, gen_teacher, load_idx, teacher_params
from convexity_lab.linear import RotationPlan, critical_search, linear_loss, random_rotation, rotate_weights
from convexity_lab.loss import descend, directional_second, full_hessian, gradient, laplacian, reg_loss
from convexity_lab.net import Architecture, Dataset, fixture_t1, init_params, random_direction, switch_signature
from convexity_lab.region import RegionSpec, certify, curvature_floor, isolation_probe, u_membership
from convexity_lab.trajectory import (SgdConfig, gamma_second, gradient_flow, gronwall_check, loss_change_fraction,
                                      loss_fraction, sgd_train, trial_percentile)

from helpers import fd_gradient, random_arch, random_data, smooth_point

pytestmark = pytest.mark.acceptance


def test_c01_gradient_matches_finite_differences(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        arch = random_arch(rng, max_width=8, max_hidden=2)
        D = random_data(rng, arch.widths[0], int(rng.integers(1, 33)))
        W = smooth_point(rng, arch, D, min_margin=1e-4)
        lam = float(rng.uniform(0.0, 1.0))
        g = gradient(W, D, lam, warn=False).flat()
        # oracle: differences of the true loss, switches recomputed at every evaluation
        fd = fd_gradient(lambda V: reg_loss(V, D, lam), W, h=1e-6)
        scale = max(np.linalg.norm(g), np.linalg.norm(fd))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(g - fd) / scale))
    elapsed = time.perf_counter() - start
    criterion(1, "gradient vs central differences", worst < 1e-6 and elapsed < 30,
              f"worst rel err {worst:.2e} (< 1e-6) over 200 draws, {elapsed:.1f}s (< 30s)")


def test_c02_curvature_floor_audit(criterion):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    violations = 0
    pairs = 0
    for _ in range(20):
        arch = random_arch(rng, max_width=6, max_hidden=3)
        D = random_data(rng, arch.widths[0], int(rng.integers(1, 17)))
        for _ in range(500):
            W = init_params(arch, rng, scale=float(rng.uniform(0.2, 2.0)))
            X = random_direction(arch, rng)
            d2 = directional_second(W, D, 0.0, X, switch_signature(W, D))
            violations += d2 < curvature_floor(W, D) * X.norm_sq
            pairs += 1
    W, D = fixture_t1()
    t1_floor = curvature_floor(W, D, r=1.0)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and abs(t1_floor + 1.0) <= 1e-12 and elapsed < 60
    criterion(2, "curvature floor audit", ok,
              f"{violations} violations in {pairs} pairs, fixture floor {t1_floor!r}, {elapsed:.1f}s (< 60s)")


def _in_u_points(rng, H, count, lam, theta):
    """The interpolating teacher plus random perturbations that stay inside U."""
    width = {1: 40, 2: 16, 3: 12}[H]
    arch = Architecture((8, *([width] * H), 1))
    spec = TeacherSpec(arch, N=12, seed=int(rng.integers(1 << 30)))
    D = gen_teacher(spec)
    rs = RegionSpec(lam, theta, D.radius, H)
    Wt = teacher_params(spec)
    pts = [Wt]
    while len(pts) < count:
        W = Wt + init_params(arch, rng, scale=float(10 ** rng.uniform(-3, 0)))
        if u_membership(W, D, rs)[0]:
            pts.append(W)
    return D, rs, pts


def test_c03_certification_floor(criterion):
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    worst = math.inf
    n = 0
    max_m = 0
    for H, count in ((1, 17), (2, 17), (3, 16)):
        D, rs, pts = _in_u_points(rng, H, count, lam=0.5, theta=0.1)
        for W in pts:
            Hm = full_hessian(W, D, rs.lam, sig=switch_signature(W, D))
            worst = min(worst, float(np.linalg.eigvalsh(Hm)[0]) - rs.theta)
            n += 1
            max_m = max(max_m, W.m)
    elapsed = time.perf_counter() - start
    ok = worst >= -1e-6 and n == 50 and max_m <= 500 and elapsed < 120
    criterion(3, "Hessian floor on in-U points", ok,
              f"{n} points, min(min_eig - theta) = {worst:.3e} (>= -1e-6), m <= {max_m}, {elapsed:.1f}s (< 120s)")


def test_c04_subharmonic(criterion):
    rng = np.random.default_rng(404)
    negatives = 0
    worst = 0.0
    for _ in range(1000):
        arch = random_arch(rng, max_width=5, max_hidden=2)
        D = random_data(rng, arch.widths[0], int(rng.integers(1, 9)))
        W = smooth_point(rng, arch, D, min_margin=1e-6)
        lap = laplacian(W, D)
        negatives += lap < 0.0
        tr = float(np.trace(full_hessian(W, D, 0.0, sig=switch_signature(W, D))))
        worst = max(worst, abs(lap - tr) / max(1.0, abs(tr)))
    criterion(4, "laplacian non-negative and equal to the Hessian trace", negatives == 0 and worst <= 1e-8,
              f"{negatives} negative of 1000, max trace mismatch {worst:.2e} (<= 1e-8)")


def test_c05_two_route_second_derivative(criterion):
    rng = np.random.default_rng(505)
    worst = 0.0
    n = 0
    redraws = 0
    while n < 1000:
        arch = random_arch(rng, max_width=5, max_hidden=2)
        D = random_data(rng, arch.widths[0], int(rng.integers(1, 9)))
        try:
            W = smooth_point(rng, arch, D, min_margin=1e-2)
        except RuntimeError:
            redraws += 1
            continue
        gs = gamma_second(W, D, float(rng.uniform(0.0, 0.5)))
        if not gs.same_piece:
            redraws += 1
            continue
        worst = max(worst, gs.rel_discrepancy)
        n += 1
    criterion(5, "two routes to the path second derivative", worst <= 1e-5,
              f"max rel discrepancy {worst:.2e} (<= 1e-5) over {n} points, {redraws} redraws (no margin or stencil crossed a kink)")


def _certified_window(rec, D, rs):
    """Start index of the longest tail where every sample is in U with positive curvature."""
    ok = [u_membership(W, D, rs)[0] and g > 0.0 for W, g in zip(rec.weights, rec.gamma_dd)]
    k = len(ok)
    while k > 0 and ok[k - 1]:
        k -= 1
    return k


def test_c06_decay_estimate(criterion):
    rng = np.random.default_rng(606)
    lam = 0.5
    bowl = gradient_flow(init_params(Architecture.parse("3,4,1"), rng), Dataset.empty(3), lam, T=1.0)
    expected = bowl.grad_sq[0] * math.exp(-2.0 * lam * 1.0)
    bowl_err = abs(bowl.grad_sq[-1] - expected) / expected

    details = []
    holds = True
    for seed in (1, 2):
        spec = TeacherSpec(Architecture.parse("3,5,1"), N=16, seed=seed)
        D = gen_teacher(spec)
        rs = RegionSpec(0.2, 0.05, D.radius, 1)
        rec = gradient_flow(init_params(spec.arch, np.random.default_rng(seed)), D, rs.lam, T=30.0, log_every=5,
                            keep_weights=True)
        k = _certified_window(rec, D, rs)
        if k >= len(rec.t) - 1:
            holds = False
            details.append(f"seed {seed}: no certified window")
            continue
        rep = gronwall_check(rec, window=(rec.t[k], rec.t1))
        holds = holds and rep.holds
        details.append(f"seed {seed}: window [{rec.t[k]:g}, {rec.t1:g}], C = {rep.C:.4f}, "
                       f"{rep.violations} violations of {rep.checked}")
    criterion(6, "gradient-norm decay estimate", bowl_err <= 1e-6 and holds,
              f"bowl rel err at t=1 {bowl_err:.2e} (<= 1e-6); " + "; ".join(details))


def test_c07_linear_network_audit(criterion):
    rng = np.random.default_rng(707)
    start = time.perf_counter()
    offending = 0
    converged = 0
    total = 0
    for k in range(10):
        hidden = [int(w) for w in rng.integers(2, 5, size=int(rng.integers(1, 3)))]
        arch = Architecture((3, *hidden, 1))
        if k % 2 == 0:
            D = gen_teacher(TeacherSpec(arch, N=int(rng.integers(5, 20)), seed=k, noise=0.1))
        else:
            D = random_data(rng, 3, int(rng.integers(5, 20)))
        rep = critical_search(arch, D, float(rng.choice([0.01, 0.1, 0.5])), starts=32, seed=k)
        offending += len(rep.offending)
        converged += sum(p.converged for p in rep.points)
        total += len(rep.points)
    worst_rot = 0.0
    for _ in range(100):
        hidden = [int(w) for w in rng.integers(2, 6, size=int(rng.integers(1, 4)))]
        arch = Architecture((3, *hidden, 1))
        D = random_data(rng, 3, 10)
        W = init_params(arch, rng)
        layer = int(rng.integers(0, arch.H))
        R = random_rotation(arch.widths[layer + 1], rng)
        base = linear_loss(W, D, 0.1)
        moved = linear_loss(rotate_weights(W, RotationPlan(layer, R)), D, 0.1)
        worst_rot = max(worst_rot, abs(moved - base) / base)
    elapsed = time.perf_counter() - start
    criterion(7, "linear-network critical points and rotations", offending == 0 and worst_rot <= 1e-10,
              f"{offending} nonzero critical points inside U(lam) ({converged}/{total} starts converged), "
              f"max rotation rel change {worst_rot:.1e} (<= 1e-10), {elapsed:.1f}s")


def test_c08_isolation_probe(criterion):
    rng = np.random.default_rng(808)
    archs = [Architecture.parse(a) for a in ("3,5,1", "3,4,4,1", "3,3,3,3,1")]
    probed = failures = runs = nonzero = 0
    worst_ratio = math.inf
    for k in range(24):
        arch = archs[k % 3]
        spec = TeacherSpec(arch, N=12, seed=100 + k, noise=[0.0, 0.005, 0.02][k % 3])
        D = gen_teacher(spec)
        lam = [0.05, 0.1][k % 2]
        rs = RegionSpec(lam, lam / 5, D.radius, arch.H)
        # half the runs start near the teacher, half from a random initialization
        W0 = (teacher_params(spec) + init_params(arch, rng, scale=0.05)) if k < 12 else init_params(arch, rng)
        g0 = gradient(W0, D, lam, warn=False).norm
        W, _, conv = descend(W0, D, lam, gtol=1e-9 * (1.0 + g0))
        runs += 1
        if not conv:
            continue
        cert = certify(W, D, rs)
        if not cert.certified:
            continue
        rep = isolation_probe(W, D, rs, n_perturb=200, radius=1e-2, seed=k, grad_scale=g0, certificate=cert)
        probed += 1
        nonzero += W.norm > 1e-6
        failures += not rep.passed
        worst_ratio = min(worst_ratio, rep.min_increase / rep.required)
    criterion(8, "quadratic growth at certified critical points", probed > 0 and failures == 0,
              f"{probed} certified critical points from {runs} runs ({nonzero} away from the origin), "
              f"{failures} failures, min increase / required = {worst_ratio:.3f}")


def test_c09_desk_scale_sgd(criterion, mnist_idx):
    images, labels = mnist_idx
    start = time.perf_counter()
    D = load_idx(images, labels, limit=1000, target=0)
    arch = Architecture.parse("784,32,16,1")
    found = 0
    fracs = []
    p10 = []
    for seed in range(20):
        W0 = init_params(arch, np.random.default_rng(seed))
        rec = sgd_train(W0, D, 5e-4, SgdConfig(batch_size=32, epochs=20, lr=0.05, seed=seed, log_every=4))
        if rec.t0 is None:
            continue
        found += 1
        f = loss_change_fraction(rec)
        if f is not None:
            fracs.append(f)
        p10.append(trial_percentile(rec, 10))
    elapsed = time.perf_counter() - start
    mean = float(np.mean(fracs)) if fracs else math.nan
    positive = all(q is not None and q > 0.0 for q in p10)
    low = min((q for q in p10 if q is not None), default=math.nan)
    ok = found >= 18 and mean >= 0.5 and positive and elapsed < 600
    criterion(9, "desk-scale SGD regime statistics", ok,
              f"t0 in {found}/20 trials, mean loss fraction {mean:.3f} (>= 0.5), "
              f"min in-regime p10 normalized {low:.3e} (> 0), {elapsed:.0f}s (< 600s)")


def test_c10_loss_fraction_identity(criterion):
    a = loss_fraction(1.0, 0.4, 0.2)
    b = loss_fraction(1.0, 1.0, 0.2)
    criterion(10, "loss change fraction identities", a == 0.25 and b == 1.0,
              f"(1.0, 0.4, 0.2) -> {a!r}; t0 = 0 -> {b!r}")
