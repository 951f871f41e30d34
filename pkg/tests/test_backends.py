import numpy as np
import pytest

from anomsynth import backends as bk
from anomsynth.errors import InvalidInputError, ParseError, TransportError

# Frozen output of HashTextEmbedder(dim=8, seed=0) on "cracked"; generated
# once by the seeded mock and committed as a golden fixture.
GOLDEN_CRACKED_8 = [
    0.12068128687784924,
    0.40621221067173247,
    0.1753060478165746,
    0.3104795992801272,
    -0.033116684049959565,
    0.5141912836116415,
    0.5959222150659284,
    -0.2696019243528133,
]

# Frozen probability row of MockFeatureExtractor(n_classes=3, seed=0) on a
# constant 0.5 gray 8x8 image.
GOLDEN_PROBS_3 = [0.4674057361800352, 0.1747511697239666, 0.3578430940959983]


def block_image(rng, blocks_h=2, blocks_w=2, factor=8):
    blocks = rng.random((blocks_h, blocks_w, 3))
    return np.repeat(np.repeat(blocks, factor, axis=0), factor, axis=1)


class TestVllm:
    def test_mock_cashew_answer(self):
        descs, raw = bk.vllm_query(bk.MockVLLM(), "cashew", None, "default")
        assert descs == ["cracked", "moldy"]
        assert raw == "cracked, moldy"

    def test_mock_is_deterministic(self):
        suite = bk.mock_suite(seed=3)
        a, _ = bk.vllm_query(suite.vllm, "widget", None, "default")
        b, _ = bk.vllm_query(suite.vllm, "widget", None, "default")
        assert a == b and len(a) >= 1

    def test_parser_normalizes_delimiters_and_case(self):
        assert bk.parse_answer("Scratched; discolored.") == ["scratched", "discolored"]
        assert bk.parse_answer("Cracked, faded") == ["cracked", "faded"]
        assert bk.parse_answer("a\nb\na") == ["a", "b"]

    def test_parser_rejects_empty(self):
        with pytest.raises(ParseError) as err:
            bk.parse_answer(" ,; \n")
        assert err.value.raw == " ,; \n"

    def test_unknown_template_rejected(self):
        with pytest.raises(InvalidInputError):
            bk.vllm_query(bk.MockVLLM(), "cashew", None, "nope")

    def test_template_embeds_object_name(self):
        templates = bk.load_templates()
        assert "default" in templates
        q = bk.render_template(templates["default"], "cashew")
        assert "cashew" in q and "{object}" not in q


class TestEmbedders:
    def test_same_string_same_vector(self):
        e = bk.HashTextEmbedder(dim=16, seed=1)
        assert np.array_equal(e.embed_text("moldy").values, e.embed_text("moldy").values)

    def test_vectors_are_unit_norm(self):
        e = bk.HashTextEmbedder(dim=16, seed=0)
        rng = np.random.default_rng(0)
        for _ in range(20):
            word = "".join(chr(rng.integers(97, 123)) for _ in range(6))
            assert np.linalg.norm(e.embed_text(word).values) == pytest.approx(1.0, abs=1e-6)

    def test_golden_vector_frozen(self):
        v = bk.HashTextEmbedder(dim=8, seed=0).embed_text("cracked").values
        assert np.allclose(v, GOLDEN_CRACKED_8, atol=1e-12)

    def test_empty_text_rejected(self):
        with pytest.raises(InvalidInputError):
            bk.HashTextEmbedder().embed_text("")

    def test_image_embedder_deterministic(self):
        e = bk.HashImageEmbedder(dim=12, seed=2)
        img = np.random.default_rng(0).random((8, 8, 3))
        assert np.array_equal(e.embed_image(img).values, e.embed_image(img.copy()).values)

    def test_cosine_dim_mismatch_rejected(self):
        a = bk.HashTextEmbedder(dim=8).embed_text("x")
        b = bk.HashTextEmbedder(dim=16).embed_text("x")
        with pytest.raises(InvalidInputError):
            a.cosine(b)


class TestSegmenter:
    def test_bright_object_on_black(self):
        img = np.zeros((16, 16, 3))
        img[4:12, 4:12] = 0.9
        mask = bk.ThresholdSegmenter(threshold=0.5).segment_foreground(img)
        expected = bk.to_gray(img).values > 0.5
        assert mask.bits.tolist() == expected.tolist()
        assert mask.area == 64

    def test_all_black_is_empty(self):
        mask = bk.ThresholdSegmenter().segment_foreground(np.zeros((8, 8, 3)))
        assert mask.area == 0

    def test_mask_dims_match_image(self):
        img = np.random.default_rng(1).random((10, 14, 3))
        mask = bk.ThresholdSegmenter().segment_foreground(img)
        assert (mask.height, mask.width) == (10, 14)


class TestBlockCodec:
    def test_block_constant_roundtrip_exact(self):
        img = block_image(np.random.default_rng(0))
        codec = bk.BlockCodec()
        assert np.array_equal(codec.decode(codec.encode(img)), img)

    def test_latent_dims_factor_8(self):
        codec = bk.BlockCodec()
        z = codec.encode(np.zeros((1024, 1024, 3)))
        assert (z.latent_height, z.latent_width) == (128, 128)

    def test_indivisible_dims_rejected(self):
        with pytest.raises(InvalidInputError):
            bk.BlockCodec().encode(np.zeros((12, 16, 3)))

    def test_roundtrip_stays_in_input_range(self):
        rng = np.random.default_rng(5)
        codec = bk.BlockCodec()
        for _ in range(10):
            img = rng.random((16, 24, 3))
            back = codec.decode(codec.encode(img))
            assert back.min() >= img.min() - 1e-12
            assert back.max() <= img.max() + 1e-12


class TestNoisePredictors:
    def _ctx(self):
        img = np.zeros((16, 16, 3))
        z = bk.BlockCodec().encode(img)
        m_in = bk.BinaryMask(np.ones((16, 16), dtype=bool))
        return z, m_in, img

    def test_zero_mock_returns_zeros(self):
        z, m_in, img = self._ctx()
        out = bk.ZeroNoisePredictor().predict_noise(z, 3, m_in, img, "p")
        assert out.values.shape == z.values.shape
        assert not out.values.any()

    def test_oracle_returns_recorded_noise(self):
        z, m_in, img = self._ctx()
        pred = bk.OracleNoisePredictor()
        eps = np.random.default_rng(1).standard_normal(z.values.shape)
        pred.record_noise(eps)
        out = pred.predict_noise(z, 5, m_in, img, "p")
        assert np.array_equal(out.values, eps)

    def test_oracle_without_recording_rejected(self):
        z, m_in, img = self._ctx()
        with pytest.raises(InvalidInputError):
            bk.OracleNoisePredictor().predict_noise(z, 5, m_in, img, "p")

    def test_shape_mismatch_rejected(self):
        z, _, img = self._ctx()
        bad_mask = bk.BinaryMask(np.ones((8, 8), dtype=bool))
        with pytest.raises(InvalidInputError):
            bk.ZeroNoisePredictor().predict_noise(z, 1, bad_mask, img, "p")

    def test_timestep_out_of_range_rejected(self):
        z, m_in, img = self._ctx()
        with pytest.raises(InvalidInputError):
            bk.ZeroNoisePredictor(total_steps=20).predict_noise(z, 0, m_in, img, "p")
        with pytest.raises(InvalidInputError):
            bk.ZeroNoisePredictor(total_steps=20).predict_noise(z, 21, m_in, img, "p")


class TestFeatureExtractor:
    def test_rows_sum_to_one(self):
        fx = bk.MockFeatureExtractor(n_classes=7, seed=0)
        rng = np.random.default_rng(2)
        probs, feats = fx.extract_features([rng.random((8, 8, 3)) for _ in range(5)])
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert probs.shape == (5, 7) and feats.shape == (5, 32)

    def test_identical_images_identical_rows(self):
        fx = bk.MockFeatureExtractor(seed=0)
        img = np.full((8, 8, 3), 0.3)
        probs, feats = fx.extract_features([img, img.copy()])
        assert np.array_equal(probs[0], probs[1])
        assert np.array_equal(feats[0], feats[1])

    def test_golden_rows_frozen(self):
        fx = bk.MockFeatureExtractor(n_classes=3, seed=0)
        probs, _ = fx.extract_features([np.full((8, 8, 3), 0.5)])
        assert np.allclose(probs[0], GOLDEN_PROBS_3, atol=1e-12)

    def test_empty_list_rejected(self):
        with pytest.raises(InvalidInputError):
            bk.MockFeatureExtractor().extract_features([])


class TestCaptionerAndProjector:
    def test_caption_uses_hint(self):
        img = np.zeros((4, 4, 3))
        assert bk.MockCaptioner().caption(img, hint="cracked") == "texture: cracked"

    def test_projector_deterministic_2d(self):
        rng = np.random.default_rng(0)
        feats = rng.random((20, 6))
        p = bk.PcaProjector()
        a = p.project(feats)
        b = p.project(feats.copy())
        assert a.shape == (20, 2)
        assert np.array_equal(a, b)


class TestDescriptors:
    def test_all_mocks_deterministic(self):
        suite = bk.mock_suite()
        for desc in suite.descriptors():
            assert desc["deterministic"] is True

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidInputError):
            bk.BackendDescriptor(kind="oracle", name="x", deterministic=True)


class TestLiveVllm:
    def test_unreachable_endpoint_raises_transport_error(self):
        live = bk.ChatCompletionsVLLM(
            endpoint="http://127.0.0.1:9/none", model="m", retries=2, backoff=0.0, timeout=0.2
        )
        with pytest.raises(TransportError) as err:
            live.answer("q", None)
        assert err.value.retries == 2
