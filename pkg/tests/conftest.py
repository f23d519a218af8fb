import numpy as np
import pytest

from repcsmc.kalman import LgssmParams
from repcsmc.models import LinearGaussianModel


def dense_joint(params: LgssmParams):
    """Joint Gaussian of (x_{0:T-1}, y_{0:T-1}) assembled from explicit block covariances.

    Returns (mean_x, cov_xx, mean_y, cov_yy, cov_xy) for the stacked vectors.
    Only meant for tiny instances (d * T <= 12).
    """
    T, d, m = params.T, params.d, params.m
    assert d * T <= 12, "dense oracle limited to d * T <= 12"
    Phi, C = params.Phi, params.C
    marg = [params.Sigma1]
    means = [params.mu1]
    for t in range(1, T):
        marg.append(Phi @ marg[-1] @ Phi.T + params.Sigma)
        means.append(Phi @ means[-1])
    cov_xx = np.zeros((T * d, T * d))
    for s in range(T):
        for t in range(s, T):
            block = marg[s] @ np.linalg.matrix_power(Phi, t - s).T
            cov_xx[s * d : (s + 1) * d, t * d : (t + 1) * d] = block
            cov_xx[t * d : (t + 1) * d, s * d : (s + 1) * d] = block.T
    Cbig = np.kron(np.eye(T), C)
    Rbig = np.kron(np.eye(T), params.R)
    mean_x = np.concatenate(means)
    return mean_x, cov_xx, Cbig @ mean_x, Cbig @ cov_xx @ Cbig.T + Rbig, cov_xx @ Cbig.T


def dense_posterior(params: LgssmParams, y):
    """Posterior mean (T, d) and covariance (T*d, T*d) of x given y, by explicit conditioning."""
    mx, Pxx, my, Pyy, Pxy = dense_joint(params)
    gain = Pxy @ np.linalg.inv(Pyy)
    mean = mx + gain @ (np.ravel(y) - my)
    cov = Pxx - gain @ Pxy.T
    return mean.reshape(params.T, params.d), cov


def dense_loglik(params: LgssmParams, y) -> float:
    _, _, my, Pyy, _ = dense_joint(params)
    r = np.ravel(y) - my
    _, logdet = np.linalg.slogdet(Pyy)
    return float(-0.5 * (r @ np.linalg.solve(Pyy, r) + logdet + r.size * np.log(2 * np.pi)))


def random_spd(rng, d, jitter=0.5):
    a = rng.standard_normal((d, d))
    return a @ a.T + jitter * np.eye(d)


def random_params(rng, d, T, m=None):
    m = d if m is None else m
    return LgssmParams(
        Phi=0.8 * rng.uniform(-1, 1, (d, d)) / np.sqrt(d),
        Sigma=random_spd(rng, d),
        Sigma1=random_spd(rng, d),
        C=rng.standard_normal((m, d)),
        R=random_spd(rng, m),
        T=T,
        mu1=rng.standard_normal(d),
    )


def tiny_lgssm(d=1, T=5, seed=0, rho=0.7, phi=0.9):
    model = LinearGaussianModel(d=d, T=T, rho=rho if d > 1 else 0.0, phis=phi)
    _, y = model.simulate(np.random.default_rng(seed))
    return model.with_data(y)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
