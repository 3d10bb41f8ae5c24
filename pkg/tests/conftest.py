import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from selectdpc.plants import LTIPlant, random_lti
from selectdpc.trajectory_data import extract_trajectories

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def simulate_lti(A, B, C, D, u, x0=None):
    """Outputs of ``x' = Ax + Bu, y = Cx + Du`` written out by hand (independent of the plant class)."""
    x = np.zeros(A.shape[0]) if x0 is None else np.asarray(x0, dtype=float)
    ys = []
    for uk in np.atleast_2d(u):
        ys.append(C @ x + D @ uk)
        x = A @ x + B @ uk
    return np.array(ys)


def lti_data(n=3, m=1, p=1, T=400, seed=0, T_p=6, T_f=10, episodes=1):
    A, B, C, D = random_lti(n, m, p, seed=seed)
    rng = np.random.default_rng(seed + 100)
    recs = []
    for _ in range(episodes):
        u = rng.uniform(-1, 1, (T, m))
        x0 = rng.standard_normal(n)
        plant = LTIPlant(A, B, C, D, x0=x0)
        plant.reset()
        recs.append((u, np.array([plant.step(uk) for uk in u])))
    return (A, B, C, D), extract_trajectories(recs, T_p, T_f)


@pytest.fixture(scope="session")
def lti_small():
    return lti_data()
