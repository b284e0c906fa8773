import math

import numpy as np
import pytest
import torch
from scipy import stats

from fourdfold import geom


def quadrature_cdf(sigma2, n=4096):
    grid = np.linspace(0, math.pi, n)
    pdf = geom.igso3_angle_pdf(grid, sigma2)
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) / 2 * np.diff(grid))])
    return grid, cdf / cdf[-1]


def ks_against_quadrature(angles, sigma2):
    grid, cdf = quadrature_cdf(sigma2)
    emp = np.searchsorted(np.sort(angles), grid) / len(angles)
    return np.abs(emp - cdf).max()


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("sigma2", [0.01, 0.25, 2.25])
def test_density_normalization(sigma2):
    grid = np.linspace(0, math.pi, 4096)
    pdf = geom.igso3_angle_pdf(grid, sigma2)
    integral = np.trapezoid(pdf, grid)
    assert abs(integral - 1.0) < 1e-4


@pytest.mark.parametrize("sigma2", [0.01, 0.04, 0.25, 1.0, 2.25, 4.0])
def test_density_normalization_grid(sigma2):
    grid = np.linspace(0, math.pi, 4096)
    integral = np.trapezoid(geom.igso3_angle_pdf(grid, sigma2), grid)
    assert abs(integral - 1.0) < 1e-4


def test_density_haar_limit():
    # at very large variance the series converges to the uniform density
    grid = np.linspace(0, math.pi, 512)
    f = geom.igso3_density(grid, 25.0)
    assert np.abs(f - 1.0).max() < 1e-3


def test_density_concentration_small_sigma():
    # quadrature oracle: nearly all angle mass below 0.1 rad
    grid = np.linspace(0, 0.1, 2048)
    pdf = geom.igso3_angle_pdf(grid, 1e-4, terms=2000)
    mass = np.trapezoid(pdf, grid)
    assert mass > 0.99


def test_density_rejects_nonpositive_sigma2():
    with pytest.raises(ValueError):
        geom.igso3_density(np.array([0.5]), 0.0)
    with pytest.raises(ValueError):
        geom.igso3_density(np.array([0.5]), -1.0)


def test_density_accepts_torch():
    w = torch.linspace(0.01, 3.1, 50, dtype=torch.float64)
    f_t = geom.igso3_density(w, 0.25)
    f_n = geom.igso3_density(w.numpy(), 0.25)
    assert np.allclose(f_t.numpy(), f_n)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_sample_concentrates_at_tiny_sigma(rng):
    r0 = geom.random_rotation(rng)
    samples = geom.sample_igso3(r0.expand(100, 3, 3), 1e-8, rng)
    rel = r0.transpose(-1, -2) @ samples
    angles = torch.linalg.norm(geom.log_so3(rel), dim=-1)
    assert angles.max().item() < 1e-3


def test_sample_ks_vs_quadrature(rng):
    angles = geom.sample_igso3_angles(0.25, 100_000, rng)
    assert ks_against_quadrature(angles, 0.25) < 0.02


def test_sample_left_invariance(rng):
    # statistics of log(r0^-1 R) must not depend on r0
    n = 20_000
    stats_per_r0 = []
    for seed in (5, 6):
        r0 = geom.random_rotation(np.random.default_rng(seed))
        samples = geom.sample_igso3(r0.expand(n, 3, 3), 0.5, rng)
        rel = r0.transpose(-1, -2) @ samples
        stats_per_r0.append(torch.linalg.norm(geom.log_so3(rel), dim=-1).numpy())
    ks = stats.ks_2samp(stats_per_r0[0], stats_per_r0[1]).statistic
    assert ks < 0.02


def test_sample_rejects_nonpositive_sigma2(rng):
    with pytest.raises(ValueError):
        geom.sample_igso3(torch.eye(3, dtype=torch.float64), 0.0, rng)


# ---------------------------------------------------------------------------
# rotation score
# ---------------------------------------------------------------------------


def test_rot_score_zero_at_center(rng):
    r = geom.random_rotation(rng, (8,))
    s = geom.rot_score(r, r, 0.25)
    assert s.abs().max().item() == 0.0


def test_rot_score_finite_difference(rng):
    # oracle: central differences of log f along the geodesic
    sigma2 = 0.49
    for _ in range(10):
        r0 = geom.random_rotation(rng)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.2, 2.6)
        v = torch.as_tensor(angle * axis)
        rt = r0 @ geom.exp_so3(v)
        score = geom.rot_score(rt, r0, sigma2)
        h = 1e-5
        lo = math.log(geom.igso3_density(np.array([angle - h]), sigma2)[0])
        hi = math.log(geom.igso3_density(np.array([angle + h]), sigma2)[0])
        fd = (hi - lo) / (2 * h)
        directional = float(score @ (v / angle))
        assert abs(directional - fd) / abs(fd) < 1e-3


def test_rot_score_norm_depends_only_on_angle(rng):
    angle = 1.1
    norms = []
    for seed in (11, 12):
        local = np.random.default_rng(seed)
        r0 = geom.random_rotation(local)
        axis = local.standard_normal(3)
        axis /= np.linalg.norm(axis)
        rt = r0 @ geom.exp_so3(torch.as_tensor(angle * axis))
        norms.append(torch.linalg.norm(geom.rot_score(rt, r0, 0.3)).item())
    assert abs(norms[0] - norms[1]) < 1e-8


def test_rot_score_rejects_nonpositive_sigma2(rng):
    r = geom.random_rotation(rng)
    with pytest.raises(ValueError):
        geom.rot_score(r, r, -0.1)


# ---------------------------------------------------------------------------
# schedule-level rotation machinery
# ---------------------------------------------------------------------------


def test_schedule_sampling_matches_exact_law(default_schedule, rng):
    rv = default_schedule.sample_rotvecs(1.0, 100_000, rng)
    assert ks_against_quadrature(np.linalg.norm(rv, axis=-1), 2.25) < 0.02


def test_lambda_trans_closed_form(default_schedule):
    assert default_schedule.lambda_trans(1.0) == pytest.approx(1.0421906109874948, abs=1e-12)


def test_lambda_rot_positive_decreasing_in_noise(default_schedule):
    # more noise -> larger score-squared norm? no: flatter density -> smaller
    # scores -> larger weight is not guaranteed; only positivity and
    # finiteness are contractual here.
    ts = np.linspace(0.0, 1.0, 11)
    lams = np.array([default_schedule.lambda_rot(t) for t in ts])
    assert (lams > 0).all() and np.isfinite(lams).all()
