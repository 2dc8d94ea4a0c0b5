import numpy as np
import pytest

from jekyll_hyde import tensor_core as tc
from jekyll_hyde.model_zoo import (
    Head,
    HeadMismatchError,
    HourglassConfig,
    build_hourglass,
    closed_form_parameter_count,
    forward_hyde,
    forward_jekyll,
    load_checkpoint,
    save_checkpoint,
)
from jekyll_hyde.tensor_core import Tensor, gradcheck

SMALL = HourglassConfig(depth=2, base_channels=2, input_extent=(4, 8, 8))


def _input(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


class TestBuild:
    def test_default_channels_and_count(self):
        cfg = HourglassConfig()
        assert cfg.channels == [8, 16]
        m = build_hourglass(cfg, Head.SIGMOID, seed=0)
        # enc0 1*8*27+8, enc1 8*16*27+16, dec1 32*8*27+8, dec0 16*8*27+8, proj 8+1
        hand = 224 + 3472 + 6920 + 3464 + 9
        assert m.parameter_count() == closed_form_parameter_count(cfg) == hand

    def test_forward_shape_default_geometry(self):
        m = build_hourglass(HourglassConfig(base_channels=2), Head.SIGMOID, seed=0)
        out = forward_jekyll(m, _input((2, 1, 16, 64, 64)))
        assert out.shape == (2, 1, 16, 64, 64)
        assert np.all((out.data > 0) & (out.data < 1))

    def test_same_seed_bit_identical(self):
        a = build_hourglass(SMALL, Head.SIGMOID, seed=5)
        b = build_hourglass(SMALL, Head.SIGMOID, seed=5)
        c = build_hourglass(SMALL, Head.SIGMOID, seed=6)
        assert a.state_hash() == b.state_hash() != c.state_hash()

    def test_indivisible_extent_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            build_hourglass(HourglassConfig(depth=3, input_extent=(16, 36, 36)), Head.SIGMOID, 0)

    def test_glorot_bounds(self):
        m = build_hourglass(SMALL, Head.SIGMOID, seed=1)
        w = m.params["enc1.weight"].data
        bound = np.sqrt(6 / ((w.shape[0] + w.shape[1]) * 27))
        assert np.abs(w).max() <= bound
        assert np.all(m.params["enc1.bias"].data == 0)

    def test_per_stage_geometry(self):
        cfg = HourglassConfig(depth=2, base_channels=2, kernels=[(3, 3, 3), (1, 3, 3)],
                              paddings=[(1, 1, 1), (0, 1, 1)], input_extent=(4, 8, 8))
        m = build_hourglass(cfg, Head.SIGMOID, 0)
        assert m.parameter_count() == closed_form_parameter_count(cfg)
        assert forward_jekyll(m, _input((1, 1, 4, 8, 8))).shape == (1, 1, 4, 8, 8)

    def test_mask_and_baseline_identical_structure(self):
        jekyll = build_hourglass(SMALL, Head.SIGMOID, 1)
        utterson = build_hourglass(SMALL, "sigmoid", 2)
        assert jekyll.config == utterson.config and jekyll.head == utterson.head
        assert jekyll.describe() == utterson.describe()
        hyde = build_hourglass(SMALL, Head.FRAME_MEAN, 3)
        assert hyde.describe() == jekyll.describe() and hyde.head != jekyll.head


class TestHeads:
    def test_zeroed_projection_gives_half(self):
        m = build_hourglass(SMALL, Head.SIGMOID, 0)
        m.params["proj.weight"].data[:] = 0
        m.params["proj.bias"].data[:] = 0
        np.testing.assert_array_equal(forward_jekyll(m, _input((2, 1, 4, 8, 8))).data, 0.5)

    def test_head_mismatch(self):
        with pytest.raises(HeadMismatchError):
            forward_hyde(build_hourglass(SMALL, Head.SIGMOID, 0), _input((1, 1, 4, 8, 8)))
        with pytest.raises(HeadMismatchError):
            forward_jekyll(build_hourglass(SMALL, Head.FRAME_MEAN, 0), _input((1, 1, 4, 8, 8)))

    def test_hyde_shape(self):
        m = build_hourglass(SMALL, Head.FRAME_MEAN, 0)
        assert forward_hyde(m, _input((3, 1, 4, 8, 8))).shape == (3, 1, 1, 8, 8)

    def test_hyde_is_time_mean_of_last_layer(self):
        m = build_hourglass(SMALL, Head.FRAME_MEAN, 4)
        x = _input((2, 1, 4, 8, 8), seed=1)
        captured = m.forward_features(x).data.astype(np.float64)
        manual = sum(captured[:, :, n] for n in range(4)) / 4
        np.testing.assert_allclose(forward_hyde(m, x).data[:, :, 0], manual, atol=1e-6)

    def test_hyde_constant_over_time(self):
        m = build_hourglass(SMALL, Head.FRAME_MEAN, 4)
        # only the projection bias survives: last layer constant in time
        for k, p in m.params.items():
            p.data[:] = 0
        m.params["proj.bias"].data[:] = 1.25
        out = forward_hyde(m, _input((1, 1, 4, 8, 8)))
        assert np.all(out.data == 1.25)


class TestGradients:
    def test_mask_input_gradient(self):
        m = build_hourglass(SMALL, Head.SIGMOID, 2).astype(np.float64)
        x = np.random.default_rng(3).uniform(-2, 2, (1, 1, 4, 8, 8))
        err = gradcheck(lambda t: tc.mean_all(m(t)), [x], max_entries=64)
        assert err <= 1e-3

    def test_parameter_gradient(self):
        m = build_hourglass(SMALL, Head.FRAME_MEAN, 2).astype(np.float64)
        x = Tensor(np.random.default_rng(4).uniform(-2, 2, (1, 1, 4, 8, 8)), dtype=np.float64)
        names = ["enc0.weight", "dec1.weight", "proj.bias"]

        def f(*ps):
            saved = {n: m.params[n] for n in names}
            m.params.update(dict(zip(names, ps)))
            try:
                return tc.mean_all(tc.square(m(x)))
            finally:
                m.params.update(saved)

        # a 1e-3 step can flip a ReLU or pooling switch somewhere in the network
        err = gradcheck(f, [m.params[n].data for n in names], step=1e-4, max_entries=40)
        assert err <= 1e-3

    @pytest.mark.parametrize("head", list(Head))
    def test_every_parameter_receives_gradient(self, head):
        m = build_hourglass(SMALL, head, 7)
        tc.mean_all(tc.square(m(_input((2, 1, 4, 8, 8), seed=9)))).backward()
        for name, p in m.params.items():
            assert p.grad is not None and np.linalg.norm(p.grad) > 0, name

    def test_forward_deterministic(self):
        m = build_hourglass(SMALL, Head.SIGMOID, 1)
        x = _input((2, 1, 4, 8, 8))
        assert m(x).data.tobytes() == m(x).data.tobytes()


def test_checkpoint_round_trip(tmp_path):
    m = build_hourglass(SMALL, Head.FRAME_MEAN, 11)
    m.epoch = 3
    x = _input((2, 1, 4, 8, 8))
    before = m(x).data
    save_checkpoint(m, tmp_path / "hyde")
    restored = load_checkpoint(tmp_path / "hyde")
    assert restored.epoch == 3 and restored.head is Head.FRAME_MEAN and restored.config == SMALL
    assert restored(x).data.tobytes() == before.tobytes()
