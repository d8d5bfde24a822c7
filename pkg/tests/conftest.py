import json

import numpy as np
import pytest

from bifhunter.gp import GaussianProcessSurrogate
from bifhunter.oracles import fit_instance
from bifhunter.systems import make_system, observe


@pytest.fixture(scope="session")
def brusselator_instance():
    return fit_instance("Brusselator", 0)


@pytest.fixture(scope="session")
def cstr_instance():
    return fit_instance("CSTR", 0)


@pytest.fixture(scope="session")
def budworm_instance():
    return fit_instance("Budworm", 0)


def fit_on_system(system_id, n_train=30, sigma=1e-3, seed=0, scale=1.0):
    """Surrogate of a shipped system from a seeded uniform design over its box."""
    spec = make_system(system_id)
    rng = np.random.default_rng(seed)
    U = spec.lower + rng.random((n_train, spec.input_dim)) * (spec.upper - spec.lower)
    n = spec.state_dim
    Y = np.array([observe(spec, u[:n], u[n], sigma, rng).value for u in U])
    gp = GaussianProcessSurrogate(noise_variance=(scale * sigma) ** 2, n_restarts=2,
                                  random_state=seed).fit(U, scale * Y)
    return spec, U, Y, gp


def tiny_config(tmp_path, **changes):
    """A fast Budworm config written to ``tmp_path``."""
    doc = {
        "name": "tiny_budworm",
        "system": {"id": "Budworm"},
        "bif_kind": "Fold1D",
        "n_initial": 5,
        "budget": 4,
        "conv_tol": 1e-3,
        "noise_sigma": 0.005,
        "seed": 3,
        "min_iterations": 2,
        "acquisition": {"grid_points": 21, "golden_iters": 8},
        "gp": {"restarts": 2},
        "reference": {"p_ref": 0.2619243415482404, "provenance": "grid minimization of |dr/dx|"},
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(changes)
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(doc))
    return path


_REPORT = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Collects one summary line per acceptance criterion, printed after the session."""
    lines = request.config.stash.setdefault(_REPORT, [])

    def add(line):
        lines.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
