import numpy as np
import pytest

from detnet_mimo.channel import SystemDims
from detnet_mimo.detnet import (
    ArchConfig,
    DetNetParams,
    T_FLOOR,
    detect,
    forward,
    load_params,
    relu,
    save_params,
    soft_sign,
)
from detnet_mimo.errors import CheckpointError, ParameterError, ShapeError
from detnet_mimo.numerics import Rng
from detnet_mimo.training import initial_params


def rho_form(x, t):
    # two-relu form of the soft sign, valid for t > 0
    return -1.0 + relu(x + t) / abs(t) - relu(x - t) / abs(t)


class TestSoftSign:
    def test_zero_maps_to_zero(self):
        for t in (0.1, 0.5, 1.0, -2.0):
            assert soft_sign(0.0, t) == 0.0

    def test_linear_region(self):
        assert soft_sign(0.5, 1.0) == pytest.approx(0.5, abs=0)

    def test_saturation(self):
        assert soft_sign(3.0, 0.5) == 1.0
        assert soft_sign(-3.0, 0.5) == -1.0

    def test_matches_two_relu_form(self):
        xs = np.linspace(-3.0, 3.0, 241)
        for t in (0.1, 0.5, 1.0, 2.0):
            assert np.allclose(soft_sign(xs, t), rho_form(xs, t), rtol=0, atol=1e-14)

    def test_sign_of_t_irrelevant(self):
        xs = np.linspace(-2.0, 2.0, 41)
        assert np.array_equal(soft_sign(xs, 0.7), soft_sign(xs, -0.7))

    def test_monotone_odd_bounded(self):
        xs = np.linspace(-5.0, 5.0, 501)
        y = soft_sign(xs, 0.8)
        assert np.all(np.diff(y) >= 0)
        assert np.allclose(y + soft_sign(-xs, 0.8), 0.0, atol=1e-14)
        assert y.min() >= -1.0 and y.max() <= 1.0

    def test_t_floor_enforced(self):
        with pytest.raises(ParameterError):
            soft_sign(1.0, 0.5 * T_FLOOR)


class TestRelu:
    def test_values(self):
        assert relu(-2.0) == 0.0
        assert relu(3.0) == 3.0
        assert relu(0.0) == 0.0


def zero_params(arch):
    k, z, v, big_l = arch.dims.k_tx, arch.z_size, arch.v_size, arch.num_layers
    return DetNetParams(
        arch=arch,
        w1=np.zeros((big_l, z, arch.input_dim)),
        b1=np.zeros((big_l, z)),
        w2=np.zeros((big_l, k, z)),
        b2=np.zeros((big_l, k)),
        w3=np.zeros((big_l, v, z)),
        b3=np.zeros((big_l, v)),
        t=np.full(big_l, 0.5),
    )


class TestArchAndParams:
    def test_from_dims_scaling(self):
        arch = ArchConfig.from_dims(SystemDims(8, 16))
        assert (arch.num_layers, arch.z_size, arch.v_size) == (24, 64, 16)
        assert arch.input_dim == 3 * 8 + 16

    def test_invalid_arch(self):
        dims = SystemDims(2, 4)
        with pytest.raises(ShapeError):
            ArchConfig(dims=dims, num_layers=0, z_size=4, v_size=2)
        with pytest.raises(ShapeError):
            ArchConfig(dims=dims, num_layers=1, z_size=4, v_size=2, residual_alpha=1.5)

    def test_param_shape_validation(self):
        arch = ArchConfig(dims=SystemDims(2, 4), num_layers=2, z_size=5, v_size=3)
        good = zero_params(arch)
        with pytest.raises(ShapeError):
            DetNetParams(
                arch=arch, w1=good.w1[:, :, :-1], b1=good.b1, w2=good.w2,
                b2=good.b2, w3=good.w3, b3=good.b3, t=good.t,
            )

    def test_t_floor_validation(self):
        arch = ArchConfig(dims=SystemDims(2, 4), num_layers=2, z_size=5, v_size=3)
        good = zero_params(arch)
        with pytest.raises(ParameterError):
            DetNetParams(
                arch=arch, w1=good.w1, b1=good.b1, w2=good.w2, b2=good.b2,
                w3=good.w3, b3=good.b3, t=np.array([0.5, 0.001]),
            )


class TestForward:
    def test_zero_network_trace_is_zero(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=4, z_size=8, v_size=2)
        params = zero_params(arch)
        h = Rng(0).normal((6, 3))
        y = Rng(1).normal((6,))
        trace = forward(params, h, y)
        assert np.array_equal(trace.x_hat, np.zeros((4, 3)))
        assert np.array_equal(trace.z, np.zeros((4, 8)))
        assert np.array_equal(trace.v, np.zeros((4, 2)))

    def test_alpha_zero_freezes_estimate(self):
        arch = ArchConfig(
            dims=SystemDims(3, 6), num_layers=4, z_size=8, v_size=2, residual_alpha=0.0
        )
        params = initial_params(arch, Rng(2))
        h = Rng(3).normal((6, 3))
        y = Rng(4).normal((6,))
        trace = forward(params, h, y)
        assert np.array_equal(trace.x_hat, np.zeros((4, 3)))
        assert np.array_equal(trace.v, np.zeros((4, 2)))

    def test_hand_computed_single_layer(self):
        dims = SystemDims(2, 2)
        arch = ArchConfig(
            dims=dims, num_layers=1, z_size=2, v_size=1, residual_alpha=1.0
        )
        w1 = np.zeros((1, 2, 7))
        w1[0, 0, 0] = 1.0  # a_1 = u_1
        w1[0, 1, 1] = 1.0  # a_2 = u_2
        params = DetNetParams(
            arch=arch,
            w1=w1,
            b1=np.zeros((1, 2)),
            w2=np.array([[[2.0, 0.0], [1.0, 0.0]]]),
            b2=np.array([[-0.5, 0.25]]),
            w3=np.array([[[1.0, 1.0]]]),
            b3=np.array([[0.3]]),
            t=np.array([2.0]),
        )
        h = np.eye(2)
        y = np.array([1.0, -2.0])
        # u = (1, -2); a = (1, -2); z = (1, 0); s = (1.5, 1.25);
        # psi_2(s) = (0.75, 0.625); c = 1*1 + 1*0 + 0.3 = 1.3
        trace = forward(params, h, y)
        assert np.allclose(trace.z[0], [1.0, 0.0], atol=1e-15)
        assert np.allclose(trace.x_hat[0], [0.75, 0.625], atol=1e-15)
        assert np.allclose(trace.v[0], [1.3], atol=1e-15)

    def test_hand_computed_with_residual(self):
        dims = SystemDims(2, 2)
        arch = ArchConfig(
            dims=dims, num_layers=1, z_size=2, v_size=1, residual_alpha=0.9
        )
        w1 = np.zeros((1, 2, 7))
        w1[0, 0, 0] = 1.0
        w1[0, 1, 1] = 1.0
        params = DetNetParams(
            arch=arch,
            w1=w1,
            b1=np.zeros((1, 2)),
            w2=np.array([[[2.0, 0.0], [1.0, 0.0]]]),
            b2=np.array([[-0.5, 0.25]]),
            w3=np.array([[[1.0, 1.0]]]),
            b3=np.array([[0.3]]),
            t=np.array([2.0]),
        )
        trace = forward(params, np.eye(2), np.array([1.0, -2.0]))
        assert np.allclose(trace.x_hat[0], [0.9 * 0.75, 0.9 * 0.625], atol=1e-15)
        assert np.allclose(trace.v[0], [0.9 * 1.3], atol=1e-15)

    def test_depends_on_y_only_through_hty(self):
        rng = Rng(6)
        h = rng.normal((5, 2))
        y1 = rng.normal((5,))
        # add a component in the null space of H^T
        q, _ = np.linalg.qr(h, mode="complete")
        null = q[:, 2:]
        y2 = y1 + null @ rng.normal((3,))
        assert np.linalg.norm(h.T @ (y2 - y1)) < 1e-12
        arch = ArchConfig(dims=SystemDims(2, 5), num_layers=3, z_size=6, v_size=2)
        params = initial_params(arch, Rng(7))
        t1 = forward(params, h, y1)
        t2 = forward(params, h, y2)
        assert np.allclose(t1.x_hat, t2.x_hat, rtol=0, atol=1e-12)
        assert np.allclose(t1.z, t2.z, rtol=0, atol=1e-12)

    def test_deterministic(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=3, z_size=8, v_size=2)
        params = initial_params(arch, Rng(8))
        h = Rng(9).normal((6, 3))
        y = Rng(10).normal((6,))
        t1 = forward(params, h, y)
        t2 = forward(params, h, y)
        assert np.array_equal(t1.x_hat, t2.x_hat)

    def test_shape_mismatch(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=2, z_size=8, v_size=2)
        params = initial_params(arch, Rng(0))
        with pytest.raises(ShapeError):
            forward(params, np.zeros((6, 4)), np.zeros(6))
        with pytest.raises(ShapeError):
            forward(params, np.zeros((6, 3)), np.zeros(5))

    def test_one_layer_is_projected_gradient_step(self):
        # With alpha=1, no side state, and hand-built weights encoding p via
        # (relu(p), relu(-p)), one layer reproduces the projected gradient
        # iteration x <- clip(x + delta*(H^T y - H^T H x), -1, 1).
        k = 3
        delta = 0.15
        dims = SystemDims(k, 6)
        arch = ArchConfig(
            dims=dims, num_layers=4, z_size=2 * k, v_size=0, residual_alpha=1.0
        )
        eye = np.eye(k)
        top = np.hstack([delta * eye, eye, -delta * eye])
        w1_layer = np.vstack([top, -top])
        t_val = 0.5
        w2_layer = t_val * np.hstack([eye, -eye])
        params = DetNetParams(
            arch=arch,
            w1=np.repeat(w1_layer[None], 4, axis=0),
            b1=np.zeros((4, 2 * k)),
            w2=np.repeat(w2_layer[None], 4, axis=0),
            b2=np.zeros((4, k)),
            w3=np.zeros((4, 0, 2 * k)),
            b3=np.zeros((4, 0)),
            t=np.full(4, t_val),
        )
        rng = Rng(11)
        h = rng.normal((6, k))
        y = rng.normal((6,))
        trace = forward(params, h, y)

        u = h.T @ y
        g = h.T @ h
        x = np.zeros(k)
        for j in range(4):
            x = np.clip(x + delta * (u - g @ x), -1.0, 1.0)
            assert np.allclose(trace.x_hat[j], x, rtol=0, atol=1e-12)


class TestDetect:
    def test_zero_network_all_plus_one(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=2, z_size=4, v_size=2)
        params = zero_params(arch)
        res = detect(params, Rng(0).normal((6, 3)), Rng(1).normal((6,)))
        assert np.array_equal(res.x_hat, np.ones(3))

    def test_default_exit_matches_trace(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=3, z_size=8, v_size=2)
        params = initial_params(arch, Rng(2))
        h = Rng(3).normal((6, 3))
        y = Rng(4).normal((6,))
        res = detect(params, h, y)
        trace = forward(params, h, y)
        assert np.array_equal(res.soft, trace.x_hat[-1])
        assert np.array_equal(res.x_hat, np.where(trace.x_hat[-1] >= 0, 1.0, -1.0))
        assert res.iterations_used == 3

    def test_early_exit_matches_trace_row(self):
        arch = ArchConfig(dims=SystemDims(3, 6), num_layers=5, z_size=8, v_size=2)
        params = initial_params(arch, Rng(5))
        h = Rng(6).normal((6, 3))
        y = Rng(7).normal((6,))
        trace = forward(params, h, y)
        for exit_layer in (1, 2, 4, 5):
            res = detect(params, h, y, exit_layer=exit_layer)
            assert np.allclose(res.soft, trace.x_hat[exit_layer - 1], atol=1e-14)

    def test_exit_layer_out_of_range(self):
        arch = ArchConfig(dims=SystemDims(2, 4), num_layers=2, z_size=4, v_size=1)
        params = zero_params(arch)
        h, y = np.zeros((4, 2)), np.zeros(4)
        with pytest.raises(ShapeError):
            detect(params, h, y, exit_layer=0)
        with pytest.raises(ShapeError):
            detect(params, h, y, exit_layer=3)


class TestCheckpoint:
    def _params(self):
        arch = ArchConfig(dims=SystemDims(3, 5), num_layers=2, z_size=6, v_size=2)
        return initial_params(arch, Rng(13))

    def test_round_trip_exact(self, tmp_path):
        params = self._params()
        path = str(tmp_path / "net.json")
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.arch == params.arch
        for name in ("w1", "b1", "w2", "b2", "w3", "b3", "t"):
            assert np.array_equal(getattr(loaded, name), getattr(params, name)), name

    def test_bad_version(self, tmp_path):
        params = self._params()
        path = str(tmp_path / "net.json")
        save_params(params, path)
        import json

        doc = json.load(open(path))
        doc["format_version"] = 999
        json.dump(doc, open(path, "w"))
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_params(str(tmp_path / "nope.json"))

    def test_corrupt_layers(self, tmp_path):
        params = self._params()
        path = str(tmp_path / "net.json")
        save_params(params, path)
        import json

        doc = json.load(open(path))
        doc["layers"] = doc["layers"][:1]
        json.dump(doc, open(path, "w"))
        with pytest.raises(CheckpointError):
            load_params(path)
