import numpy as np
import pytest

from scale_pinn.autodiff.jet import richardson_difference
from scale_pinn.network import NetworkConfig, ParameterSet, forward, init_params
from scale_pinn.problems import make_problem, sample_batch

# finite-difference steps per derivative order for O(1)-frequency networks
NET_FD_STEPS = {1: 1e-3, 2: 2e-3, 3: 5e-3, 4: 1e-2}


def random_network(rng, input_names=("x", "t"), bounds=((-1.0, 1.0), (0.0, 1.0)), outputs=("u",)):
    """Small plain or skip-concat network with random depth, width and frequency."""
    depth = int(rng.integers(2, 5))
    width = int(rng.integers(8, 33))
    cfg = NetworkConfig(
        len(input_names), [width] * depth, list(outputs),
        activation=str(rng.choice(["silu", "softplus"])),
        frequency_factor=float(rng.uniform(1.0, 3.0)),
        skip_concat=bool(rng.integers(2)),
        seed=int(rng.integers(1 << 30)),
        input_names=list(input_names),
        input_bounds=[tuple(b) for b in bounds],
    )
    return cfg, init_params(cfg)


def network_fd(params, cfg, x, axis, order, output=0):
    """Richardson-extrapolated central difference of one network output along one axis."""
    x = np.asarray(x, dtype=np.float64)

    def f(s):
        y = x.copy()
        y[axis] = s
        return forward(params, cfg, y)[output]

    return richardson_difference(f, x[axis], order, NET_FD_STEPS[order])


def small_setup(name, rng, seed=0, widths=(12, 12), n=16):
    """Small network for ``name``, a perturbed snapshot and a sampled batch."""
    spec = make_problem(name, {"Re": 100.0} if name == "cavity" else {})
    if name == "cavity":
        cfg = spec.network_config(layer_widths=list(widths), branch_widths={o: [8] for o in spec.outputs},
                                  seed=seed)
    else:
        cfg = spec.network_config(layer_widths=list(widths), skip_concat=bool(seed % 2), seed=seed)
    p = init_params(cfg)
    pm = ParameterSet(cfg, p.flat + 0.01 * rng.normal(size=p.size))
    batch = sample_batch(spec, rng, n, 8, 8)
    return spec, cfg, p, pm, batch


def rel_err(a, b, floor=1.0):
    return abs(a - b) / max(abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
