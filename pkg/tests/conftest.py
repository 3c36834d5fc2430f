import numpy as np
import pytest

from ddmpc import (
    certify_constants,
    compute_coefficients,
    example_config,
    generate_data,
    realize_transfer_function,
)

# reference study sizes: third-order SISO plant, horizon 10, N = 1000
ORDER = 3
HORIZON = 10
NOISE_BOUND = 1e-4


@pytest.fixture(scope="session")
def example_model():
    return realize_transfer_function([0.02, 0.061, 0.011], [1.0, -2.1, 1.5, -0.3])


@pytest.fixture(scope="session")
def example_record(example_model):
    cfg = example_config()
    return generate_data(example_model, cfg.N, cfg.mpc.u_lo, cfg.mpc.u_hi,
                         cfg.data_seed, NOISE_BOUND, ORDER, HORIZON + 2 * ORDER)


@pytest.fixture(scope="session")
def clean_record(example_model):
    cfg = example_config()
    return generate_data(example_model, cfg.N, cfg.mpc.u_lo, cfg.mpc.u_hi,
                         cfg.data_seed, 0.0, ORDER, HORIZON + 2 * ORDER)


@pytest.fixture(scope="session")
def example_constants(clean_record):
    return certify_constants(clean_record, ORDER, HORIZON, [-10.0], [10.0], 10.0)


@pytest.fixture(scope="session")
def example_coeffs(example_constants):
    return compute_coefficients(example_constants, NOISE_BOUND, HORIZON, ORDER)


def scalar_model(a: float):
    """First-order plant x+ = a x + u, y = x."""
    from ddmpc import StateSpaceModel

    return StateSpaceModel([[a]], [[1.0]], [[1.0]], [[0.0]])


def random_siso_model(rng: np.random.Generator, n: int):
    """Random stable observable SISO system in companion form."""
    from ddmpc import StateSpaceModel

    while True:
        poles = rng.uniform(-0.9, 0.9, size=n)
        den = np.poly(poles)
        num = rng.uniform(-1.0, 1.0, size=n)
        A = np.zeros((n, n))
        if n > 1:
            A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -den[1:][::-1]
        B = np.zeros((n, 1))
        B[-1, 0] = 1.0
        C = num[::-1].reshape(1, n)
        try:
            return StateSpaceModel(A, B, C, [[0.0]])
        except Exception:
            continue
