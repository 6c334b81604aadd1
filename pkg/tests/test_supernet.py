import math

import numpy as np
import pytest

from ecmt import autodiff as ad
from ecmt.errors import ConfigError, DimensionError, FormatError
from ecmt.supernet import (
    NORM_EPS,
    LayerSpec,
    SuperNet,
    TaskSpec,
    WidthConfig,
    WidthList,
    active_count,
    build_toy_supernet,
    extremes,
    sample_config,
    slice_layer_params,
)

WIDTHS = WidthList((0.6, 0.7, 0.8, 0.9, 1.0))


# ---------------------------------------------------------------------------
# independent forward oracle: standalone dense net holding copies of the
# sliced weights, shift-add convolution instead of im2col


def _ceil_count(ratio, full):
    return max(1, min(full, math.ceil(ratio * full - 1e-9)))


def _shift_add_conv(x, k):
    b, _, h, w = x.shape
    o = k.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((b, o, h, w))
    for di in range(3):
        for dj in range(3):
            out += np.einsum("bchw,oc->bohw", xp[:, :, di : di + h, dj : dj + w], k[:, :, di, dj])
    return out


def manual_forward(net, cfg, batch):
    """Plain-numpy re-implementation over copied weight slices."""

    def run_chain(tag, layers, ratios, x, cur_ratio):
        ratio_iter = iter(ratios)
        for i, spec in enumerate(layers):
            name = f"{tag}{i}" if tag == "enc" else f"{tag}.{i}"
            if spec.kind == "conv2d":
                out_ratio = next(ratio_iter) if spec.has_own_ratio else 1.0
                ai = _ceil_count(cur_ratio if spec.slim_in else 1.0, spec.full_in)
                ao = _ceil_count(out_ratio, spec.full_out)
                w = np.array(net.params[f"{name}.w"].value[:ao, :ai])
                b = np.array(net.params[f"{name}.b"].value[:ao])
                x = _shift_add_conv(x, w) + b.reshape(1, -1, 1, 1)
                cur_ratio = out_ratio
            elif spec.kind in ("dense", "task-head"):
                out_ratio = next(ratio_iter) if spec.has_own_ratio else 1.0
                ai = _ceil_count(cur_ratio if spec.slim_in else 1.0, spec.full_in)
                ao = _ceil_count(out_ratio if spec.slim_out else 1.0, spec.full_out)
                if x.ndim == 4:
                    x = x.mean(axis=(2, 3))
                w = np.array(net.params[f"{name}.w"].value[:ai, :ao])
                b = np.array(net.params[f"{name}.b"].value[:ao])
                x = x @ w + b
                cur_ratio = out_ratio
            else:
                a = _ceil_count(cur_ratio, spec.full_in)
                gamma = np.array(net.params[f"{name}.gamma"].value[:a])
                beta = np.array(net.params[f"{name}.beta"].value[:a])
                axes = (0, 2, 3) if x.ndim == 4 else (0,)
                shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
                mu = x.mean(axis=axes, keepdims=True)
                var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
                x = (x - mu) / np.sqrt(var + NORM_EPS)
                x = x * gamma.reshape(shape) + beta.reshape(shape)
            if spec.relu_after:
                x = np.maximum(x, 0.0)
        return x, cur_ratio

    z, enc_ratio = run_chain("enc", net.encoder, cfg.encoder, np.asarray(batch, float), 1.0)
    outs = []
    for t, dec in enumerate(net.decoders):
        out, _ = run_chain(f"dec{t}", dec, cfg.decoders[t], z, enc_ratio)
        outs.append(out)
    return outs, z


class TestWidthList:
    def test_valid(self):
        w = WidthList((0.6, 0.7, 0.8, 0.9, 1.0))
        assert w.w_min == 0.6 and w.w_max == 1.0 and len(w) == 5

    def test_must_end_at_one(self):
        with pytest.raises(ValueError, match="1.0"):
            WidthList((0.5, 0.6, 0.7))

    def test_spacing_enforced(self):
        with pytest.raises(ValueError, match="0.1"):
            WidthList((0.5, 0.75, 1.0))

    def test_float_drift_tolerated(self):
        ratios = tuple(np.arange(0.2, 1.05, 0.1))  # accumulates float error
        w = WidthList(ratios)
        assert w.contains(0.7) and w.w_max == 1.0

    def test_snap_nearest(self):
        assert WIDTHS.snap(0.72) == 0.7
        assert WIDTHS.snap(0.78) == 0.8
        assert WIDTHS.snap(0.6) == 0.6

    def test_snap_ties_upward(self):
        assert WIDTHS.snap(0.75) == 0.8
        assert WIDTHS.snap(0.65) == 0.7

    def test_index_of_rejects_off_grid(self):
        with pytest.raises(ConfigError):
            WIDTHS.index_of(0.55)


class TestActiveCount:
    def test_identity(self):
        assert active_count(1.0, 64) == 64

    def test_half(self):
        assert active_count(0.5, 64) == 32

    def test_ceiling_rule(self):
        assert active_count(0.7, 10) == 7
        assert active_count(0.75, 10) == 8

    def test_never_zero(self):
        assert active_count(0.1, 3) == 1

    def test_float_artifacts(self):
        # 0.7 * 10 is 7.000000000000001 in binary; must not round up
        for full in (10, 100, 1000):
            assert active_count(0.7, full) == round(0.7 * full)


class TestSliceLayer:
    def test_full_ratio_gives_whole_tensor(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        sliced = slice_layer_params(net, "enc2", 1.0, 1.0)
        assert sliced["w"].value.shape == net.params["enc2.w"].value.shape
        assert np.shares_memory(sliced["w"].value, net.params["enc2.w"].value)

    def test_dense_leading_block(self):
        # dense 8 -> 16 sliced at (0.5, 0.5) is the leading 4 x 8 block
        enc = [LayerSpec("dense", 3, 8, slim_in=False, slim_out=True, relu_after=True)]
        dec = [[
            LayerSpec("dense", 8, 16, slim_in=True, slim_out=True, relu_after=True),
            LayerSpec("task-head", 16, 2, slim_in=True, slim_out=False),
        ]]
        net = SuperNet(enc, dec, [TaskSpec("t", "classification", 2)],
                       WidthList((0.5, 0.6, 0.7, 0.8, 0.9, 1.0)), input_shape=(3,))
        sliced = slice_layer_params(net, "dec0.0", 0.5, 0.5)
        assert sliced["w"].value.shape == (4, 8)
        np.testing.assert_array_equal(
            sliced["w"].value, net.params["dec0.0.w"].value[:4, :8]
        )

    def test_off_grid_ratio_rejected(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        with pytest.raises(ConfigError):
            slice_layer_params(net, "enc2", 0.5, 0.8)  # 0.5 below w_min

    def test_training_updates_only_leading_block(self):
        net = build_toy_supernet(widths=WIDTHS, seed=3)
        before = {k: t.value.copy() for k, t in net.params.items()}
        cfg = net.uniform_config(0.6)
        rng = np.random.default_rng(0)
        batch = rng.normal(size=(4, 1, 8, 8))
        outs, _ = net.forward(cfg, batch)
        loss = None
        for o in outs:
            term = ad.reduce_mean(ad.mul(o, o))
            loss = term if loss is None else ad.add(loss, term)
        ad.zero_grads(net.params)
        ad.backward(loss)
        ad.adam_step(net.params, ad.AdamState(lr=0.1))
        # active blocks moved, trailing blocks kept their values
        a1 = active_count(0.6, 8)
        assert not np.allclose(net.params["enc0.w"].value[:a1], before["enc0.w"][:a1])
        np.testing.assert_array_equal(net.params["enc0.w"].value[a1:], before["enc0.w"][a1:])
        a2 = active_count(0.6, 16)
        np.testing.assert_array_equal(
            net.params["enc2.w"].value[a2:], before["enc2.w"][a2:]
        )
        np.testing.assert_array_equal(
            net.params["enc2.w"].value[:a2, a1:], before["enc2.w"][:a2, a1:]
        )
        a3 = active_count(0.6, 12)
        np.testing.assert_array_equal(
            net.params["dec1.0.w"].value[a3:], before["dec1.0.w"][a3:]
        )


class TestForward:
    def test_full_config_matches_unsliced_network_bitwise(self):
        net = build_toy_supernet(widths=WIDTHS, seed=1)
        rng = np.random.default_rng(2)
        batch = rng.normal(size=(5, 1, 8, 8))
        full = net.uniform_config(1.0)
        outs, z = net.forward(full, batch)

        # same arithmetic, no slicing path: rebuild each op on raw params
        x = ad.Tensor(batch)
        x = ad.conv2d(x, net.params["enc0.w"])
        x = ad.add(x, ad.reshape(net.params["enc0.b"], (1, 8, 1, 1)))
        for name, c in (("enc1", 8),):
            mu = ad.reduce_mean(x, axis=(0, 2, 3), keepdims=True)
            cen = ad.sub(x, mu)
            var = ad.reduce_mean(ad.mul(cen, cen), axis=(0, 2, 3), keepdims=True)
            xhat = ad.mul(cen, ad.power(ad.add(var, NORM_EPS), -0.5))
            x = ad.add(
                ad.mul(xhat, ad.reshape(net.params[f"{name}.gamma"], (1, c, 1, 1))),
                ad.reshape(net.params[f"{name}.beta"], (1, c, 1, 1)),
            )
            x = ad.relu(x)
        x = ad.conv2d(x, net.params["enc2.w"])
        x = ad.add(x, ad.reshape(net.params["enc2.b"], (1, 16, 1, 1)))
        mu = ad.reduce_mean(x, axis=(0, 2, 3), keepdims=True)
        cen = ad.sub(x, mu)
        var = ad.reduce_mean(ad.mul(cen, cen), axis=(0, 2, 3), keepdims=True)
        xhat = ad.mul(cen, ad.power(ad.add(var, NORM_EPS), -0.5))
        x = ad.add(
            ad.mul(xhat, ad.reshape(net.params["enc3.gamma"], (1, 16, 1, 1))),
            ad.reshape(net.params["enc3.beta"], (1, 16, 1, 1)),
        )
        x = ad.relu(x)
        assert np.array_equal(z.value, x.value)

    def test_z_channel_count_tracks_config(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        for ratio in WIDTHS:
            cfg = net.uniform_config(ratio)
            _, z = net.forward(cfg, np.zeros((2, 1, 8, 8)))
            assert z.value.shape[1] == active_count(ratio, 16)

    def test_extraction_oracle_equivalence(self):
        net = build_toy_supernet(widths=WIDTHS, seed=4)
        rng = np.random.default_rng(5)
        batch = rng.normal(size=(6, 1, 8, 8))
        for _ in range(10):
            cfg = sample_config(rng, WIDTHS, net)
            outs, z = net.forward(cfg, batch)
            outs_m, z_m = manual_forward(net, cfg, batch)
            assert np.abs(z.value - z_m).max() < 1e-12
            for a, b in zip(outs, outs_m):
                assert np.abs(a.value - b).max() < 1e-12

    def test_full_forward_invariant_to_width_list(self):
        n1 = build_toy_supernet(widths=WIDTHS, seed=6)
        n2 = build_toy_supernet(widths=WidthList((0.8, 0.9, 1.0)), seed=6)
        batch = np.random.default_rng(7).normal(size=(3, 1, 8, 8))
        o1, z1 = n1.forward(n1.uniform_config(1.0), batch)
        o2, z2 = n2.forward(n2.uniform_config(1.0), batch)
        assert np.array_equal(z1.value, z2.value)
        for a, b in zip(o1, o2):
            assert np.array_equal(a.value, b.value)

    def test_invalid_config_rejected(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        with pytest.raises(ConfigError):
            net.forward(net.uniform_config(0.55), np.zeros((1, 1, 8, 8)))
        with pytest.raises(ConfigError):
            net.forward(
                WidthConfig(encoder=(1.0,), decoders=((1.0,), (1.0,), (1.0,))),
                np.zeros((1, 1, 8, 8)),
            )

    def test_batch_shape_mismatch(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        with pytest.raises(DimensionError):
            net.forward(net.uniform_config(1.0), np.zeros((2, 3, 8, 8)))

    def test_stats_config_mismatch_rejected(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        batch = np.zeros((4, 1, 8, 8))
        stats = net.bn_recalibrate(net.uniform_config(0.8), [batch])
        with pytest.raises(ConfigError):
            net.forward(net.uniform_config(1.0), batch, stats=stats)


class TestCountMacs:
    def test_dense_example(self):
        enc = [LayerSpec("dense", 4, 8, slim_in=False, slim_out=True, relu_after=True)]
        dec = [[
            LayerSpec("dense", 8, 16, slim_in=True, slim_out=True, relu_after=True),
            LayerSpec("task-head", 16, 2, slim_in=True, slim_out=False),
        ]]
        net = SuperNet(enc, dec, [TaskSpec("t", "classification", 2)],
                       WidthList((0.5, 0.6, 0.7, 0.8, 0.9, 1.0)), input_shape=(4,))
        # dense 8->16 at (0.5, 0.5): 4 * 8 = 32
        full_head = active_count(0.5, 16) * 2
        cfg = WidthConfig(encoder=(0.5,), decoders=((0.5,),))
        assert net.count_macs(cfg) == 4 * active_count(0.5, 8) + 4 * 8 + full_head

    def test_conv_example(self):
        # conv 4 -> 8 channels on 8x8 at full width: 9 * 4 * 8 * 64 = 18432
        enc = [LayerSpec("conv2d", 4, 8, slim_in=False, slim_out=True, relu_after=True)]
        dec = [[LayerSpec("task-head", 8, 2, slim_in=True, slim_out=False)]]
        net = SuperNet(enc, dec, [TaskSpec("t", "classification", 2)], WIDTHS,
                       input_shape=(4, 8, 8))
        cfg = WidthConfig(encoder=(1.0,), decoders=((),))
        assert net.count_macs(cfg) == 18432 + 8 * 2

    def test_min_below_max(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        big, small = extremes(WIDTHS, net)
        assert net.count_macs(small) < net.count_macs(big)

    def _exhaustive_net(self):
        enc = [
            LayerSpec("conv2d", 1, 4, slim_in=False, slim_out=True),
            LayerSpec("chan-norm", 4, 4, relu_after=True),
            LayerSpec("conv2d", 4, 6, slim_in=True, slim_out=True),
            LayerSpec("chan-norm", 6, 6, relu_after=True),
        ]
        dec = [[
            LayerSpec("conv2d", 6, 4, slim_in=True, slim_out=True),
            LayerSpec("chan-norm", 4, 4, relu_after=True),
            LayerSpec("task-head", 4, 2, slim_in=True, slim_out=False),
        ]]
        return SuperNet(enc, dec, [TaskSpec("t", "classification", 2)], WIDTHS,
                        input_shape=(1, 6, 6), seed=2)

    def test_exhaustive_instrumented_count(self, monkeypatch):
        """count_macs equals literal multiply counting for every config."""
        net = self._exhaustive_net()
        counter = {"n": 0}
        real_mm, real_conv = ad.matmul, ad.conv2d

        def counting_mm(a, b):
            out = real_mm(a, b)
            av = a.value if isinstance(a, ad.Tensor) else np.asarray(a)
            bv = b.value if isinstance(b, ad.Tensor) else np.asarray(b)
            counter["n"] += av.shape[0] * av.shape[1] * bv.shape[1]
            return out

        def counting_conv(x, k):
            out = real_conv(x, k)
            bsz, cin, h, w = x.value.shape
            counter["n"] += bsz * 9 * cin * k.value.shape[0] * h * w
            return out

        monkeypatch.setattr(ad, "matmul", counting_mm)
        monkeypatch.setattr(ad, "conv2d", counting_conv)
        batch = np.zeros((1, 1, 6, 6))
        ratios = list(WIDTHS)
        for r1 in ratios:
            for r2 in ratios:
                for r3 in ratios:
                    cfg = WidthConfig(encoder=(r1, r2), decoders=((r3,),))
                    counter["n"] = 0
                    net.forward(cfg, batch)
                    assert counter["n"] == net.count_macs(cfg), cfg

    def test_monotone_in_every_coordinate(self):
        net = self._exhaustive_net()
        ratios = list(WIDTHS)
        for r1 in ratios:
            for r2 in ratios:
                for r3 in ratios:
                    vec = [r1, r2, r3]
                    cfg = WidthConfig(encoder=(r1, r2), decoders=((r3,),))
                    base = net.count_macs(cfg)
                    for i in range(3):
                        j = ratios.index(vec[i])
                        if j + 1 == len(ratios):
                            continue
                        bumped = list(vec)
                        bumped[i] = ratios[j + 1]
                        cfg2 = WidthConfig(encoder=(bumped[0], bumped[1]),
                                           decoders=((bumped[2],),))
                        assert net.count_macs(cfg2) >= base


class TestBnRecalibrate:
    def test_constant_zero_activations(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        for t in net.params.values():
            t.value = np.zeros_like(t.value)
        stats = net.bn_recalibrate(net.uniform_config(1.0), [np.zeros((4, 1, 8, 8))])
        for mu in stats.means.values():
            np.testing.assert_array_equal(mu, np.zeros_like(mu))
        for var in stats.variances.values():
            np.testing.assert_array_equal(var, np.zeros_like(var))

    def test_single_batch_equals_batch_stats(self):
        net = build_toy_supernet(widths=WIDTHS, seed=1)
        batch = np.random.default_rng(0).normal(size=(8, 1, 8, 8))
        stats = net.bn_recalibrate(net.uniform_config(1.0), [batch])
        # first norm layer sees the conv output of the batch
        x = ad.conv2d(ad.Tensor(batch), net.params["enc0.w"])
        x = ad.add(x, ad.reshape(net.params["enc0.b"], (1, 8, 1, 1))).value
        np.testing.assert_allclose(stats.means["enc1"], x.mean(axis=(0, 2, 3)), rtol=1e-12)
        np.testing.assert_allclose(stats.variances["enc1"], x.var(axis=(0, 2, 3)), rtol=1e-12)

    def test_two_batches_average(self):
        net = build_toy_supernet(widths=WIDTHS, seed=1)
        rng = np.random.default_rng(3)
        b1 = rng.normal(size=(8, 1, 8, 8))
        b2 = rng.normal(size=(8, 1, 8, 8)) + 2.0
        s1 = net.bn_recalibrate(net.uniform_config(1.0), [b1])
        s2 = net.bn_recalibrate(net.uniform_config(1.0), [b2])
        both = net.bn_recalibrate(net.uniform_config(1.0), [b1, b2])
        for name in both.means:
            np.testing.assert_allclose(
                both.means[name], (s1.means[name] + s2.means[name]) / 2, rtol=1e-12
            )
            np.testing.assert_allclose(
                both.variances[name], (s1.variances[name] + s2.variances[name]) / 2,
                rtol=1e-12,
            )

    def test_zero_batches_rejected(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        with pytest.raises(ValueError):
            net.bn_recalibrate(net.uniform_config(1.0), [])

    def test_parameters_untouched(self):
        net = build_toy_supernet(widths=WIDTHS, seed=2)
        before = {k: t.value.copy() for k, t in net.params.items()}
        net.bn_recalibrate(net.uniform_config(0.8), [np.ones((4, 1, 8, 8))])
        for k, t in net.params.items():
            np.testing.assert_array_equal(t.value, before[k])


class TestSampleConfig:
    def test_singleton_width_list(self):
        net = build_toy_supernet(widths=WidthList((1.0,)), seed=0)
        cfg = sample_config(np.random.default_rng(0), net.widths, net)
        assert cfg == net.uniform_config(1.0)

    def test_seed_reproducible(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        c1 = sample_config(np.random.default_rng(42), WIDTHS, net)
        c2 = sample_config(np.random.default_rng(42), WIDTHS, net)
        assert c1 == c2

    def test_per_layer_frequencies_uniform(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        rng = np.random.default_rng(123)
        n = 10_000
        counts = np.zeros((5, len(WIDTHS)))  # 5 slimmable layers in the toy net
        for _ in range(n):
            cfg = sample_config(rng, WIDTHS, net)
            for li, r in enumerate(cfg.flatten()):
                counts[li, WIDTHS.index_of(r)] += 1
        p = 1.0 / len(WIDTHS)
        sigma = math.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(counts / n - p) < 3 * sigma + 1e-9)


class TestExtremes:
    def test_six_to_ten_grid(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        big, small = extremes(WIDTHS, net)
        assert set(big.flatten()) == {1.0}
        assert set(small.flatten()) == {0.6}

    def test_singleton(self):
        net = build_toy_supernet(widths=WidthList((1.0,)), seed=0)
        big, small = extremes(net.widths, net)
        assert big == small

    def test_mac_order(self):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        big, small = extremes(WIDTHS, net)
        assert net.count_macs(big) >= net.count_macs(small)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        net = build_toy_supernet(widths=WIDTHS, seed=9)
        path = tmp_path / "net.ecmt"
        net.save(path)
        loaded = SuperNet.load(path)
        assert loaded.widths == net.widths
        assert loaded.tasks == net.tasks
        for k in net.params:
            np.testing.assert_array_equal(loaded.params[k].value, net.params[k].value)
        batch = np.random.default_rng(1).normal(size=(2, 1, 8, 8))
        cfg = net.uniform_config(0.8)
        a, _ = net.forward(cfg, batch)
        b, _ = loaded.forward(cfg, batch)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.value, y.value)

    def test_save_bytes_stable(self, tmp_path):
        net = build_toy_supernet(widths=WIDTHS, seed=9)
        net.save(tmp_path / "a.ecmt")
        net.save(tmp_path / "b.ecmt")
        assert (tmp_path / "a.ecmt").read_bytes() == (tmp_path / "b.ecmt").read_bytes()

    def test_wrong_format_rejected(self, tmp_path):
        net = build_toy_supernet(widths=WIDTHS, seed=0)
        net.save(tmp_path / "net.ecmt")
        data = (tmp_path / "net.ecmt").read_bytes()
        (tmp_path / "bad.ecmt").write_bytes(data.replace(b"supernet", b"suspnect", 1))
        with pytest.raises(FormatError):
            SuperNet.load(tmp_path / "bad.ecmt")
