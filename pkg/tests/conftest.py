import numpy as np
import pytest

from cpfn.model import init_model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_model():
    return init_model(2, 1, r=3, hidden_widths=(6, 6), seed=3, eps0=0.3)


def stub_model(d=1, q=1, r=1, phi_out=None, psi_out=None, eps0=0.05, kernel="gaussian", latent="standard_normal"):
    """Model whose submodules ignore their inputs and emit fixed vectors.

    With no hidden layers and zero weights the output layer is just its bias,
    so phi(x) = phi_out and psi(u) = psi_out.  psi ends in a gelu, so the
    requested psi_out is pre-imaged through a bisection on gelu.
    """
    from scipy.optimize import brentq
    from scipy.special import ndtr

    model = init_model(d, q, r=r, hidden_widths=(1,), seed=0, eps0=eps0, kernel=kernel, latent=latent)
    vals = np.zeros_like(model.params.values)
    pv = model.params.with_values(vals)
    phi_out = np.zeros(r * q) if phi_out is None else np.asarray(phi_out, float).reshape(-1)
    psi_out = np.zeros(r * q) if psi_out is None else np.asarray(psi_out, float).reshape(-1)
    # hidden layer outputs gelu(0) = 0, so the last layer returns its bias
    pv["phi.b1"][:] = phi_out
    pre = [0.0 if t == 0 else brentq(lambda z: z * ndtr(z) - t, -0.75 if t < 0 else 0, 50) for t in psi_out]
    pv["psi.b1"][:] = pre
    pv["log_eps"][:] = np.log(np.broadcast_to(eps0, (q,)))
    return model.with_params(pv.values)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
