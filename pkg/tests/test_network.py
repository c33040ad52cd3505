import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scale_pinn.autodiff import ConfigurationError
from scale_pinn.network import (CheckpointError, NetworkConfig, ParameterSet, forward, forward_bundle,
                                init_params, load_checkpoint, save_checkpoint)

from conftest import network_fd, random_network, rel_err


def sin_network():
    """f(x, t) = sin(2 pi x) realized by one sinusoidal unit with F = 2."""
    cfg = NetworkConfig(2, [1], ["u"], frequency_factor=2.0, input_names=["x", "t"])
    p = ParameterSet(cfg)
    p["W1"][:] = [[1.0], [0.0]]
    p["Wout"][:] = [[1.0]]
    return cfg, p


def flow_config():
    return NetworkConfig(2, [12, 8], ["u", "v", "p"], branch_widths={"u": [6, 6], "v": [6], "p": [5]},
                         input_names=["x", "y"], input_bounds=[(0, 1), (0, 1)], seed=3)


# -- init_params --------------------------------------------------------------------------

def test_init_deterministic():
    cfg = NetworkConfig(2, [16, 16], ["u"], seed=11)
    assert np.array_equal(init_params(cfg).flat, init_params(cfg).flat)


def test_init_seed_changes_weights():
    cfg = NetworkConfig(2, [16, 16], ["u"], seed=11)
    assert not np.array_equal(init_params(cfg).flat, init_params(cfg, seed=12).flat)


def test_he_variance():
    cfg = NetworkConfig(64, [1563], ["u"], seed=5)
    w = init_params(cfg)["W1"]
    assert w.size >= 10**5
    assert abs(np.var(w) / (2.0 / 64) - 1.0) <= 0.05
    assert abs(np.mean(w)) <= 0.01


def test_biases_zero():
    cfg = flow_config()
    p = init_params(cfg)
    for name, shape in p.shapes:
        if len(shape) == 1:
            assert not p[name].any(), name


def test_no_output_bias():
    names = [n for n, _ in flow_config().layer_shapes()]
    assert "u.Wout" in names and not any(n.endswith("bout") for n in names)


# -- configuration ------------------------------------------------------------------------

def test_branch_and_skip_exclusive():
    with pytest.raises(ConfigurationError):
        NetworkConfig(2, [8], ["u"], branch_widths={"u": [4]}, skip_concat=True)


@pytest.mark.parametrize("kw", [{"frequency_factor": 0.0}, {"activation": "sin"}, {"activation": "relu"},
                                {"layer_widths": []}, {"output_names": []}])
def test_invalid_config(kw):
    base = dict(input_dim=2, layer_widths=[8], output_names=["u"])
    base.update(kw)
    with pytest.raises(ConfigurationError):
        NetworkConfig(**base)


def test_wrong_input_dimension():
    cfg = NetworkConfig(2, [8], ["u"])
    with pytest.raises(ConfigurationError):
        forward(init_params(cfg), cfg, [0.1, 0.2, 0.3])


# -- forward ------------------------------------------------------------------------------

def test_zero_weights_zero_output():
    cfg = flow_config()
    assert not forward(ParameterSet(cfg), cfg, np.random.default_rng(0).random((5, 2))).any()


@pytest.mark.parametrize("hidden", [1, 2, 3, 4])
def test_skip_concat_width(hidden):
    # x_1 is the input, x_2..x_L the nonlinear layers: L - 1 = hidden of them
    cfg = NetworkConfig(2, [10] * hidden, ["u"], skip_concat=True)
    assert dict(cfg.layer_shapes())["Wout"] == (hidden * 10, 1)


def test_hand_computed_1_2_1():
    cfg = NetworkConfig(1, [2], ["u"], frequency_factor=1.5)
    p = ParameterSet(cfg)
    p["W1"][:] = [[0.3, -0.7]]
    p["b1"][:] = [0.1, 0.25]
    p["Wout"][:] = [[2.0], [-0.5]]
    x = 0.4
    z1 = 1.5 * math.pi * (0.3 * x + 0.1)
    z2 = 1.5 * math.pi * (-0.7 * x + 0.25)
    expected = 2.0 * math.sin(z1) - 0.5 * math.sin(z2)
    assert abs(forward(p, cfg, [x])[0] - expected) <= 1e-14


def test_hand_computed_silu_skip():
    cfg = NetworkConfig(1, [1, 1], ["u"], frequency_factor=1.0, skip_concat=True)
    p = ParameterSet(cfg)
    p["W1"][:] = [[0.5]]
    p["W2"][:] = [[2.0]]
    p["b2"][:] = [-0.3]
    p["Wout"][:] = [[1.5], [4.0]]  # rows: (x_3, x_2)
    x = -0.2
    h1 = math.sin(math.pi * 0.5 * x)
    z = 2.0 * h1 - 0.3
    h2 = z / (1.0 + math.exp(-z))
    assert abs(forward(p, cfg, [x])[0] - (1.5 * h2 + 4.0 * h1)) <= 1e-14


def test_flow_branch_isolation():
    cfg = flow_config()
    p = init_params(cfg)
    x = np.random.default_rng(1).random((9, 2))
    before = forward(p, cfg, x)
    q = p.copy()
    q["v.W1"][:] += 0.37
    q["v.Wout"][:] *= -2.0
    after = forward(q, cfg, x)
    assert np.array_equal(before[:, 0], after[:, 0])
    assert np.array_equal(before[:, 2], after[:, 2])
    assert not np.array_equal(before[:, 1], after[:, 1])


def test_frequency_absorbed_into_first_layer():
    cfg = NetworkConfig(2, [16, 16], ["u"], frequency_factor=1.5, seed=2)
    p = init_params(cfg)
    cfg2 = NetworkConfig(2, [16, 16], ["u"], frequency_factor=3.0, seed=2)
    q = ParameterSet(cfg2, p.flat.copy())
    q["W1"][:] *= 0.5
    q["b1"][:] *= 0.5
    x = np.random.default_rng(2).normal(size=(20, 2))
    assert np.array_equal(forward(p, cfg, x), forward(q, cfg2, x))


def test_input_normalization():
    # bounds [0, 4] map x = 2 to the origin of the network input
    cfg = NetworkConfig(1, [1], ["u"], frequency_factor=1.0, input_names=["x"], input_bounds=[(0.0, 4.0)])
    p = ParameterSet(cfg)
    p["W1"][:] = [[1.0]]
    p["Wout"][:] = [[1.0]]
    assert abs(forward(p, cfg, [2.0])[0]) <= 1e-15
    b = forward_bundle(p, cfg, [2.0], {"u": ("x",)})
    assert abs(b[("u", "x")][0] - math.pi / 2.0) <= 1e-14


# -- forward_bundle -----------------------------------------------------------------------

def test_bundle_zero_network():
    cfg = flow_config()
    b = forward_bundle(ParameterSet(cfg), cfg, np.random.default_rng(0).random((4, 2)),
                       {"u": ("", "x", "xx", "yyyy"), "p": ("y",)})
    assert all(not np.any(v) for v in b.values())


def test_bundle_sin_second_derivative():
    cfg, p = sin_network()
    x = np.random.default_rng(4).uniform(-1, 1, size=(50, 2))
    b = forward_bundle(p, cfg, x, {"u": ("", "xx", "xxxx")})
    s = np.sin(2 * np.pi * x[:, 0])
    assert np.max(np.abs(b[("u", "")] - s)) <= 1e-12
    assert np.max(np.abs(b[("u", "xx")] + 4 * np.pi**2 * s)) <= 1e-10
    assert np.max(np.abs(b[("u", "xxxx")] - 16 * np.pi**4 * s)) <= 1e-8


def test_bundle_no_time_dependence():
    cfg = NetworkConfig(2, [16, 16], ["u"], seed=9, input_names=["x", "t"], skip_concat=True)
    p = init_params(cfg)
    p["W1"][1, :] = 0.0
    b = forward_bundle(p, cfg, np.random.default_rng(1).random((10, 2)), {"u": ("t", "tt")})
    assert not b[("u", "t")].any() and not b[("u", "tt")].any()


def test_bundle_order_too_high():
    cfg = NetworkConfig(2, [8], ["u"], input_names=["x", "t"])
    with pytest.raises(ConfigurationError):
        forward_bundle(init_params(cfg), cfg, [0.1, 0.2], {"u": ("xxxxx",)})


def test_bundle_mixed_key_rejected():
    cfg = NetworkConfig(2, [8], ["u"], input_names=["x", "t"])
    with pytest.raises(ConfigurationError):
        forward_bundle(init_params(cfg), cfg, [0.1, 0.2], {"u": ("xt",)})


def test_bundle_values_match_forward(rng):
    cfg = flow_config()
    p = init_params(cfg)
    x = rng.random((7, 2))
    b = forward_bundle(p, cfg, x, {"u": ("", "xx"), "v": ("",), "p": ("", "y")})
    f = forward(p, cfg, x)
    for j, o in enumerate("uvp"):
        assert np.array_equal(b[(o, "")], f[:, j])


def test_flow_bundle_matches_fd(rng):
    cfg = flow_config()
    p = init_params(cfg)
    x = np.array([0.31, 0.72])
    b = forward_bundle(p, cfg, x, {o: ("x", "xx", "yyy", "yyyy") for o in "uvp"})
    for j, o in enumerate("uvp"):
        assert rel_err(float(b[(o, "x")][0]), network_fd(p, cfg, x, 0, 1, j)) <= 1e-6
        assert rel_err(float(b[(o, "xx")][0]), network_fd(p, cfg, x, 0, 2, j)) <= 1e-6
        assert rel_err(float(b[(o, "yyy")][0]), network_fd(p, cfg, x, 1, 3, j)) <= 1e-4
        assert rel_err(float(b[(o, "yyyy")][0]), network_fd(p, cfg, x, 1, 4, j)) <= 1e-4


def test_random_bundles_match_fd(rng):
    for _ in range(8):
        cfg, p = random_network(rng)
        x = np.array([rng.uniform(-1, 1), rng.uniform(0, 1)])
        b = forward_bundle(p, cfg, x, {"u": ("x", "xx", "xxx", "xxxx", "t", "tt")})
        for key, axis, k in (("x", 0, 1), ("xx", 0, 2), ("t", 1, 1), ("tt", 1, 2)):
            assert rel_err(float(b[("u", key)][0]), network_fd(p, cfg, x, axis, k)) <= 1e-6
        for key, k in (("xxx", 3), ("xxxx", 4)):
            assert rel_err(float(b[("u", key)][0]), network_fd(p, cfg, x, 0, k)) <= 1e-4


# -- ParameterSet and checkpoints ---------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=4), st.integers(1, 3), st.booleans(),
       st.integers(0, 2**32 - 1))
def test_pack_unpack_roundtrip(widths, n_out, skip, seed):
    cfg = NetworkConfig(2, widths, [f"o{i}" for i in range(n_out)], skip_concat=skip)
    p = init_params(cfg, seed=seed)
    flat = p.pack()
    assert flat.size == sum(int(np.prod(s)) for _, s in cfg.layer_shapes())
    q = ParameterSet.unpack(cfg, flat)
    assert np.array_equal(q.flat, p.flat)
    for name, _ in p.shapes:
        assert np.array_equal(q[name], p[name])


def test_arrays_alias_flat():
    cfg = NetworkConfig(2, [4], ["u"])
    p = init_params(cfg)
    p.flat[:] = 0.0
    assert not p["W1"].any()


def test_unpack_wrong_length():
    cfg = NetworkConfig(2, [4], ["u"])
    with pytest.raises(ConfigurationError):
        ParameterSet.unpack(cfg, np.zeros(3))


def test_checkpoint_roundtrip(tmp_path):
    cfg = flow_config()
    p = init_params(cfg)
    save_checkpoint(tmp_path / "c.bin", p, cfg)
    digest, flat = load_checkpoint(tmp_path / "c.bin", cfg)
    assert digest == cfg.config_hash()
    assert np.array_equal(flat, p.flat)
    header = (tmp_path / "c.bin").read_bytes().split(b"\n", 1)[0].decode()
    assert header.split()[-1] == str(p.size)


def test_checkpoint_hash_mismatch(tmp_path):
    cfg = flow_config()
    save_checkpoint(tmp_path / "c.bin", init_params(cfg), cfg)
    other = NetworkConfig(2, [12, 8], ["u", "v", "p"], branch_widths={"u": [6, 6], "v": [6], "p": [5]},
                          input_names=["x", "y"], input_bounds=[(0, 1), (0, 1)], seed=4)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.bin", other)


def test_checkpoint_truncated(tmp_path):
    cfg = flow_config()
    save_checkpoint(tmp_path / "c.bin", init_params(cfg), cfg)
    data = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(data[:-5])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "c.bin")
