import numpy as np
import pytest

from zipdialog import numerics as nx
from zipdialog.model import (Model, ModelConfig, add_speaker_embeddings, encode_text,
                             estimate_vector_field, init_model, init_stereo_from_mono,
                             load_checkpoint, save_checkpoint, text_condition, timestep_features,
                             trunk_input)
from zipdialog.numerics import Tensor

SMALL = ModelConfig(vocab_size=12, text_dim=8, feat_dim=4, hidden=8, text_layers=1,
                    trunk_layers=2, time_features=8)


@pytest.fixture
def model():
    return init_model(SMALL, seed=0)


def inputs(rng, T=6, C=1, D=4, N=4, B=1):
    tokens = rng.integers(2, SMALL.vocab_size, (B, N))
    tokens[:, 0] = 0
    speakers = np.ones((B, N), dtype=int)
    x = rng.standard_normal((B, T, C * D))
    cond = x * (np.arange(T) < 2)[None, :, None]
    return tokens, speakers, x, cond


class TestTextEncoder:
    def test_shape(self, model, rng):
        tok = rng.integers(0, 12, (2, 5))
        assert encode_text(model, tok).shape == (2, 5, 8)

    def test_out_of_range(self, model):
        with pytest.raises(ValueError):
            encode_text(model, np.array([[0, 12]]))

    def test_zero_params_give_zero(self):
        m = init_model(SMALL, 0)
        for n, p in m.params.items():
            if n.startswith("text."):
                p.data[:] = 0
        y = encode_text(m, np.array([[0, 3, 5]]))
        np.testing.assert_array_equal(y.data, 0.0)

    def test_token_order_matters(self, model):
        a = encode_text(model, np.array([[3, 5, 7]])).data[0]
        b = encode_text(model, np.array([[5, 3, 7]])).data[0]
        assert not np.allclose(a[0], b[0]) and not np.allclose(a[1], b[1])


class TestSpeakerEmbeddings:
    def test_adds_rows(self):
        table = Tensor([[1.0, 0.0], [0.0, 1.0]])
        y = add_speaker_embeddings(Tensor(np.zeros((1, 2, 2))), np.array([[1, 2]]), table)
        np.testing.assert_array_equal(y.data[0], [[1, 0], [0, 1]])

    def test_zero_table_is_identity(self, rng):
        y = Tensor(rng.standard_normal((1, 3, 2)))
        out = add_speaker_embeddings(y, np.array([[1, 2, 1]]), Tensor(np.zeros((2, 2))))
        np.testing.assert_array_equal(out.data, y.data)

    def test_uniform_shift(self, rng):
        y = Tensor(rng.standard_normal((1, 3, 2)))
        out = add_speaker_embeddings(y, np.ones((1, 3), int), Tensor([[1.0, 2.0], [5.0, 5.0]]))
        np.testing.assert_allclose(out.data - y.data, [[[1, 2]] * 3], atol=1e-12)

    def test_bad_speaker(self):
        with pytest.raises(ValueError):
            add_speaker_embeddings(Tensor(np.zeros((1, 1, 2))), np.array([[3]]), Tensor(np.zeros((2, 2))))

    def test_label_flip_symmetry(self, model, rng):
        tokens, _, x, cond = inputs(rng, N=5)
        speakers = np.array([[1, 1, 2, 2, 2]])
        v = estimate_vector_field(model, x, text_condition(model, tokens, speakers, 6), cond, 0.3).data
        flipped = model.copy()
        flipped["spk.table"].data[:] = model["spk.table"].data[::-1]
        v2 = estimate_vector_field(flipped, x, text_condition(flipped, tokens, 3 - speakers, 6),
                                   cond, 0.3).data
        np.testing.assert_array_equal(v, v2)


class TestVectorField:
    def test_mono_shape(self, model, rng):
        tokens, spk, x, cond = inputs(rng)
        v = estimate_vector_field(model, x, text_condition(model, tokens, spk, 6), cond, 0.5)
        assert v.shape == (1, 6, 4)

    def test_stereo_shape(self, model, rng):
        st = init_stereo_from_mono(model)
        tokens, spk, x, cond = inputs(rng, C=2)
        v = estimate_vector_field(st, x, text_condition(st, tokens, spk, 6), cond, 0.5, "stereo")
        assert v.shape == (1, 6, 8)

    def test_head_mismatch(self, model, rng):
        tokens, spk, x, cond = inputs(rng, C=2)
        z = text_condition(model, tokens, spk, 6)
        with pytest.raises(ValueError):
            estimate_vector_field(model, x, z, cond, 0.5, "mono")
        with pytest.raises(ValueError):
            estimate_vector_field(model, x, z, cond, 0.5, "stereo")

    def test_null_condition_differs(self, model, rng):
        tokens, spk, x, cond = inputs(rng)
        model["null.z"].data[:] = rng.standard_normal(8)
        z = text_condition(model, tokens, spk, 6)
        a = estimate_vector_field(model, x, z, cond, 0.5, keep=np.ones(1)).data
        b = estimate_vector_field(model, x, z, cond, 0.5, keep=np.zeros(1)).data
        assert np.abs(a - b).max() > 0
        np.testing.assert_array_equal(a, estimate_vector_field(model, x, z, cond, 0.5).data)

    def test_deterministic(self, model, rng):
        tokens, spk, x, cond = inputs(rng)
        z = text_condition(model, tokens, spk, 6)
        a = estimate_vector_field(model, x, z, cond, 0.5).data
        assert a.tobytes() == estimate_vector_field(model, x, z, cond, 0.5).data.tobytes()

    def test_gradients_match_central_differences(self, rng):
        m = init_model(SMALL, 1)
        tokens, spk, x, cond = inputs(rng, T=5, N=3)
        names = ["vf.mono.in.w0", "spk.table", "vf.blocks.1.time.w", "text.blocks.0.ff.w1"]
        params = [m[n] for n in names]
        target = rng.standard_normal(x.shape)

        def loss():
            v = estimate_vector_field(m, x, text_condition(m, tokens, spk, 5), cond, 0.4)
            return nx.masked_mse(v, target, np.ones((1, 5, 1)))

        analytic = nx.backward_grad(loss(), params)
        numeric = nx.finite_diff_grad(lambda: loss().item(), params, 1e-5)
        for a, n in zip(analytic, numeric):
            assert nx.max_relative_error(a, n) < 1e-4


def test_timestep_features_injective():
    t = np.linspace(0, 1, 2001)
    f = timestep_features(t, 16)
    d = np.linalg.norm(f[1:] - f[:-1], axis=1)
    assert d.min() > 0
    # distinct points far apart in t stay apart in feature space
    far = np.linalg.norm(f[:, None] - f[None, ::50], axis=-1)
    gap = np.abs(t[:, None] - t[None, ::50])
    assert far[gap > 0.01].min() > 1e-3


class TestStereoInit:
    def test_copies_shared_parts(self, model):
        st = init_stereo_from_mono(model)
        for n, p in model.params.items():
            np.testing.assert_array_equal(st[n].data, p.data)
        np.testing.assert_array_equal(st["vf.stereo.in.w1"].data, 0.5 * model["vf.mono.in.w0"].data)

    def test_duplicated_input_reproduces_mono_trunk(self, model, rng):
        st = init_stereo_from_mono(model)
        tokens, spk, x, cond = inputs(rng)
        z = text_condition(model, tokens, spk, 6)
        mono_h = trunk_input(model, x, z, cond, "mono")
        stereo_h = trunk_input(st, np.concatenate([x, x], -1), z, np.concatenate([cond, cond], -1),
                               "stereo")
        assert mono_h.tobytes() == stereo_h.tobytes()
        v_m = estimate_vector_field(model, x, z, cond, 0.7).data
        v_s = estimate_vector_field(st, np.concatenate([x, x], -1), z,
                                    np.concatenate([cond, cond], -1), 0.7, "stereo").data
        assert v_s[..., :4].tobytes() == v_s[..., 4:].tobytes() == v_m.tobytes()

    def test_plain_duplication_is_not_equivalent(self, model, rng):
        st = init_stereo_from_mono(model, scale=1.0)
        tokens, spk, x, cond = inputs(rng)
        z = text_condition(model, tokens, spk, 6)
        a = trunk_input(model, x, z, cond)
        b = trunk_input(st, np.concatenate([x, x], -1), z, np.concatenate([cond, cond], -1), "stereo")
        assert not np.allclose(a, b)

    def test_random_projections(self, model):
        st = init_stereo_from_mono(model, random_projections=True, seed=3)
        assert not np.allclose(st["vf.stereo.out.w0"].data, model["vf.mono.out.w0"].data)
        np.testing.assert_array_equal(st["vf.mono.out.w0"].data, model["vf.mono.out.w0"].data)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, model, tmp_path):
        st = init_stereo_from_mono(model)
        save_checkpoint(tmp_path / "a.zdck", st, {"stage": "x"})
        back, meta = load_checkpoint(tmp_path / "a.zdck")
        assert meta == {"stage": "x"} and back.config == st.config
        assert list(back.params) == list(st.params)
        for n in st.params:
            assert back[n].data.tobytes() == st[n].data.tobytes()
        save_checkpoint(tmp_path / "b.zdck", back, {"stage": "x"})
        assert (tmp_path / "a.zdck").read_bytes() == (tmp_path / "b.zdck").read_bytes()

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "x")

    def test_trailing_bytes(self, model, tmp_path):
        save_checkpoint(tmp_path / "a", model)
        with open(tmp_path / "a", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "a")

    def test_unknown_config_key(self):
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"bogus": 1})


def test_default_dims():
    cfg = ModelConfig()
    assert (cfg.vocab_size, cfg.text_dim, cfg.feat_dim, cfg.hidden) == (64, 32, 16, 64)
    assert (cfg.text_layers, cfg.trunk_layers, cfg.heads) == (2, 3, 2)
    assert isinstance(init_model(), Model)
