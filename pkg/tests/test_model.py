import time

import numpy as np
import pytest

from modeforge import autodiff as ad
from modeforge.autodiff import Tensor, check_gradients
from modeforge.model import (CfreConfig, HydraConfig, HydraModel, TdseConfig,
                             cfre_forward, closed_head, init_params, mlfe_forward,
                             multi_head_attention, res_conv1d_forward, tdse_forward)


def tiny_config(mode, n_classes=3, c=2, d=8):
    # T_max equals the test length so the positional table is fully used
    return HydraConfig.small(mode, n_classes, in_channels=c, d_model=d,
                             cfre={"widths": (4, 6)},
                             tdse={"heads": 2, "d_ff": 12, "max_len": 8, "dropout": 0.0},
                             mlfe={"d_state": 4})


class TestConfigs:
    def test_heads_must_divide(self):
        with pytest.raises(ValueError, match="divisible"):
            TdseConfig(d_model=10, heads=4)

    def test_odd_kernels(self):
        with pytest.raises(ValueError, match="odd"):
            CfreConfig(k_t=4)

    def test_encoder_width_must_match(self):
        with pytest.raises(ValueError, match="d_model"):
            HydraConfig("tdse", 3, CfreConfig(d_model=16), TdseConfig(d_model=8))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            HydraConfig(mode="lstm")

    def test_dict_round_trip(self):
        cfg = tiny_config("mlfe")
        assert HydraConfig.from_dict(cfg.to_dict()) == cfg

    def test_reference_defaults(self):
        cfg = HydraConfig()
        assert (cfg.cfre.k_t, cfg.cfre.k_f, cfg.cfre.d_model) == (3, 15, 64)
        assert (cfg.tdse.layers, cfg.tdse.heads, cfg.tdse.d_ff) == (2, 4, 128)
        assert (cfg.mlfe.d_state, cfg.mlfe.conv_kernel, cfg.mlfe.expand, cfg.mlfe.layers) == (16, 4, 2, 1)


class TestInit:
    def test_statistics(self):
        cfg = HydraConfig.small("tdse", 5, d_model=64)
        p, buffers = init_params(cfg, np.random.default_rng(0))
        w = np.concatenate([p[k].data.ravel() for k in p if k.endswith(("wq", "wk", "pos"))])
        assert abs(w.mean()) < 2e-3
        assert w.std() == pytest.approx(0.02, rel=0.05)
        assert np.all(p["cfre.0.bn.weight"].data == 1) and np.all(p["cfre.0.bn.bias"].data == 0)
        assert np.all(buffers["cfre.0.bn.running_var"] == 1)

    def test_shortcut_only_when_widths_differ(self):
        cfg = HydraConfig.small("tdse", 2, in_channels=4, d_model=8, cfre={"widths": (4, 8)})
        p, _ = init_params(cfg, np.random.default_rng(0))
        assert "cfre.0.shortcut.weight" not in p
        assert "cfre.1.shortcut.weight" in p
        assert "cfre.2.shortcut.weight" not in p

    def test_mlfe_state_matrix(self):
        cfg = tiny_config("mlfe")
        p, _ = init_params(cfg, np.random.default_rng(0))
        A = p["mlfe.0.A"].data
        assert A.shape == (cfg.mlfe.d_inner, 4)
        np.testing.assert_array_equal(A[0], [-1, -2, -3, -4])
        dt = np.log1p(np.exp(p["mlfe.0.x_proj.bias"].data[:cfg.mlfe.d_inner]))
        assert np.all((dt >= 1e-3 - 1e-12) & (dt <= 1e-1 + 1e-12))


class TestResConv:
    def test_zero_weights_give_identity(self, rng):
        cfg = HydraConfig.small("tdse", 2, in_channels=4, d_model=4, cfre={"widths": (4, 4)})
        p, buffers = init_params(cfg, rng)
        for k in ("cfre.0.conv_t.weight", "cfre.0.conv_f.weight"):
            p[k].data[:] = 0
        x = rng.normal(size=(2, 4, 16))
        out = res_conv1d_forward(Tensor(x), p, buffers, "cfre.0", 2, 3, 15, train=False)
        np.testing.assert_allclose(out.data, x)

    def test_length_preserved(self, rng):
        cfg = HydraConfig.small("tdse", 2, in_channels=2, d_model=8, cfre={"widths": (4, 6)})
        p, buffers = init_params(cfg, rng)
        out = res_conv1d_forward(Tensor(rng.normal(size=(2, 4, 20))), p, buffers, "cfre.1",
                                 2, 3, 15, train=True)
        assert out.shape == (2, 6, 20)

    def test_gradcheck_block(self, rng):
        cfg = HydraConfig.small("tdse", 2, in_channels=2, d_model=4, cfre={"widths": (4, 4)})
        p, buffers = init_params(cfg, rng)
        x = Tensor(rng.normal(size=(2, 2, 8)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4, 8)))
        names = [k for k in p if k.startswith("cfre.0.")]
        for k in names:
            p[k].data = p[k].data + rng.normal(scale=0.3, size=p[k].shape)

        def f():
            return (res_conv1d_forward(x, p, {k: v.copy() for k, v in buffers.items()},
                                       "cfre.0", 1, 3, 15, train=True) * w).sum()
        errs = check_gradients(f, [x] + [p[k] for k in names])
        assert max(errs.values()) <= 1e-4


class TestCfre:
    def test_shape(self, rng):
        cfg = HydraConfig.small("tdse", 2, d_model=64)
        p, buffers = init_params(cfg, rng)
        assert cfre_forward(Tensor(rng.normal(size=(2, 16, 2))), cfg.cfre, p, buffers).shape == (2, 16, 64)

    def test_vmd_channels(self, rng):
        cfg = HydraConfig.small("tdse", 2, in_channels=6, d_model=8)
        p, buffers = init_params(cfg, rng)
        assert cfre_forward(Tensor(rng.normal(size=(1, 10, 6))), cfg.cfre, p, buffers).shape == (1, 10, 8)

    def test_channel_mismatch(self, rng):
        cfg = HydraConfig.small("tdse", 2, in_channels=2, d_model=8)
        p, buffers = init_params(cfg, rng)
        with pytest.raises(ValueError, match="channels"):
            cfre_forward(Tensor(np.ones((1, 10, 6))), cfg.cfre, p, buffers)


class TestTdse:
    def test_shapes_and_class_token(self, rng):
        cfg = tiny_config("tdse")
        p, _ = init_params(cfg, rng)
        x_enc, x_co = tdse_forward(Tensor(rng.normal(size=(2, 5, 8))), cfg.tdse, p)
        assert x_enc.shape == (2, 6, 8) and x_co.shape == (2, 8)
        np.testing.assert_array_equal(x_co.data, x_enc.data[:, 0])

    def test_too_long(self, rng):
        cfg = tiny_config("tdse")
        p, _ = init_params(cfg, rng)
        with pytest.raises(ValueError, match="max_len"):
            tdse_forward(Tensor(np.zeros((1, 9, 8))), cfg.tdse, p)

    def test_attention_rows_sum_to_one(self, rng):
        cfg = tiny_config("tdse")
        p, _ = init_params(cfg, rng)
        *_, maps = tdse_forward(Tensor(rng.normal(size=(2, 7, 8))), cfg.tdse, p,
                                return_attention=True)
        for m in maps:
            assert m.shape == (2, 2, 8, 8)
            np.testing.assert_allclose(m.sum(axis=-1), 1.0, atol=1e-12)

    def test_attention_by_hand(self):
        x = np.array([[[1.0, 0.0, 0.5, -1.0], [0.0, 2.0, -0.5, 1.0]]])
        rng = np.random.default_rng(3)
        wq, wk, wv, wo = (rng.normal(scale=0.5, size=(4, 4)) for _ in range(4))
        out = multi_head_attention(Tensor(x), Tensor(wq), Tensor(wk), Tensor(wv), Tensor(wo), 1).data
        q, k, v = x[0] @ wq, x[0] @ wk, x[0] @ wv
        expected = np.zeros((2, 4))
        for i in range(2):
            s = [float(q[i] @ k[j]) / 2.0 for j in range(2)]
            e = [np.exp(si - max(s)) for si in s]
            a = [ei / sum(e) for ei in e]
            expected[i] = (a[0] * v[0] + a[1] * v[1]) @ wo
        np.testing.assert_allclose(out[0], expected, rtol=1e-12)

    def test_positional_sensitivity(self, rng):
        cfg = tiny_config("tdse")
        p, _ = init_params(cfg, rng)
        p["tdse.pos"].data = rng.normal(size=p["tdse.pos"].shape)
        x = rng.normal(size=(1, 6, 8))
        _, a = tdse_forward(Tensor(x), cfg.tdse, p)
        _, b = tdse_forward(Tensor(x[:, ::-1].copy()), cfg.tdse, p)
        assert np.abs(a.data - b.data).max() > 1e-6


class TestMlfe:
    def test_shapes(self, rng):
        cfg = tiny_config("mlfe")
        p, _ = init_params(cfg, rng)
        x_enc, x_co = mlfe_forward(Tensor(rng.normal(size=(2, 7, 8))), cfg.mlfe, p)
        assert x_enc.shape == (2, 7, 8) and x_co.shape == (2, 8)
        np.testing.assert_allclose(x_co.data, x_enc.data.mean(axis=1))

    def test_causal(self, rng):
        cfg = tiny_config("mlfe")
        p, _ = init_params(cfg, rng)
        x = rng.normal(size=(1, 12, 8))
        y0 = mlfe_forward(Tensor(x), cfg.mlfe, p)[0].data
        x2 = x.copy()
        x2[:, 7:] = rng.normal(size=(1, 5, 8))
        y1 = mlfe_forward(Tensor(x2), cfg.mlfe, p)[0].data
        np.testing.assert_array_equal(y0[:, :7], y1[:, :7])
        assert np.abs(y0[:, 7:] - y1[:, 7:]).max() > 0

    def test_zero_dynamics(self, rng):
        # A = 0 gives exp(0) = identity transitions; with B = 0 the state never leaves zero
        b, T, D, N = 2, 6, 3, 4
        y = ad.selective_scan(Tensor(rng.normal(size=(b, T, D))), Tensor(rng.uniform(size=(b, T, D))),
                              Tensor(np.zeros((D, N))), Tensor(np.zeros((b, T, N))),
                              Tensor(rng.normal(size=(b, T, N))))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_hand_unrolled_recurrence(self):
        # d_s = 2, one channel, three steps
        u = np.array([0.5, -1.0, 2.0])
        dl = np.array([0.3, 0.7, 0.2])
        A = np.array([-0.5, -2.0])
        B = np.array([[1.0, 0.5], [0.2, -0.3], [0.0, 1.0]])
        C = np.array([[0.4, 1.0], [1.0, 1.0], [-0.5, 0.25]])
        h = np.zeros(2)
        ref = []
        for t in range(3):
            h = np.exp(dl[t] * A) * h + dl[t] * B[t] * u[t]
            ref.append(C[t] @ h)
        y = ad.selective_scan(Tensor(u[None, :, None]), Tensor(dl[None, :, None]), Tensor(A[None]),
                              Tensor(B[None]), Tensor(C[None]))
        np.testing.assert_allclose(y.data[0, :, 0], ref, rtol=1e-14)

    def test_linear_time(self, rng):
        cfg = HydraConfig.small("mlfe", 2, d_model=16, mlfe={"d_state": 8})
        p, _ = init_params(cfg, rng)

        def timed(T):
            x = Tensor(rng.normal(size=(1, T, 16)))
            best = np.inf
            for _ in range(7):
                t0 = time.perf_counter()
                mlfe_forward(x, cfg.mlfe, p)
                best = min(best, time.perf_counter() - t0)
            return best
        times = {T: timed(T) for T in (64, 128, 256, 512)}
        for T in (64, 128, 256):
            assert times[2 * T] / times[T] <= 2.5


class TestHead:
    def test_zero_head(self):
        out = closed_head(Tensor(np.ones((2, 4))), Tensor(np.zeros((4, 3))), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_identity_head(self, rng):
        x = rng.normal(size=(2, 3))
        out = closed_head(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            closed_head(Tensor(np.ones((2, 4))), Tensor(np.zeros((5, 3))), Tensor(np.zeros(3)))

    def test_gradcheck(self, rng):
        x, W, b = (Tensor(rng.normal(size=s), requires_grad=True) for s in ((3, 4), (4, 2), (2,)))
        errs = check_gradients(lambda: ad.cross_entropy(closed_head(x, W, b), [0, 1, 1]), [x, W, b])
        assert max(errs.values()) <= 1e-6


class TestFullModel:
    @pytest.mark.parametrize("mode", ["tdse", "mlfe"])
    def test_gradcheck(self, rng, mode):
        model = HydraModel(tiny_config(mode), seed=5)
        for t in model.params.values():
            t.data = t.data + rng.normal(scale=0.1, size=t.shape)
        if mode == "mlfe":
            # step sizes near 0.5 so dL/dA is far above finite-difference round-off
            di = model.config.mlfe.d_inner
            model.params["mlfe.0.x_proj.bias"].data[:di] = np.log(np.expm1(0.5))
        x = rng.normal(size=(2, 8, 2))
        y = np.array([0, 2])
        buf = {k: v.copy() for k, v in model.buffers.items()}

        def f():
            model.buffers = {k: v.copy() for k, v in buf.items()}
            return ad.cross_entropy(model(x, train=True), y)
        errs = check_gradients(f, model.parameters())
        assert max(errs.values()) <= 1e-4

    def test_state_and_checkpoint(self, tmp_path, rng):
        model = HydraModel(tiny_config("tdse"), seed=1)
        x = rng.normal(size=(3, 8, 2))
        model(x, train=True, rng=rng)  # moves BN running statistics
        model.save(tmp_path / "m.ckpt", {"note": "x"})
        loaded, side = HydraModel.load(tmp_path / "m.ckpt")
        assert side["note"] == "x" and side["config"]["mode"] == "tdse"
        np.testing.assert_array_equal(loaded.predict_logits(x), model.predict_logits(x))

    def test_state_mismatch(self):
        a = HydraModel(tiny_config("tdse"))
        b = HydraModel(tiny_config("mlfe"))
        with pytest.raises(KeyError):
            a.load_state_dict(b.state_dict())

    def test_float32_cast(self, rng):
        model = HydraModel(tiny_config("mlfe"), seed=2)
        x = rng.normal(size=(2, 8, 2))
        ref = model.predict_logits(x)
        model.astype(np.float32)
        assert model.dtype == np.float32
        np.testing.assert_allclose(model.predict_logits(x), ref, atol=1e-5)
