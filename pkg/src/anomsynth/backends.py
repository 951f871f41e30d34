"""Model boundaries behind narrow interfaces with deterministic mocks.

Every learned component the pipeline touches (vision-language model, text
and image embedders, foreground segmenter, latent autoencoder, denoiser,
feature extractor, captioner, 2-D projector) is a small protocol here. The
mock implementations are pure functions of (inputs, seed) and run with no
network or accelerator, so the full pipeline is testable on a laptop; live
adapters are thin HTTP shims.
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidInputError, ParseError, TransportError
from .imageops import BinaryMask, save_image, to_gray

LATENT_DOWNSCALE = 8


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length L2-normalized embedding."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        norm = float(np.linalg.norm(v))
        if v.size == 0 or norm == 0.0 or not np.isfinite(norm):
            raise InvalidInputError("embedding must be nonempty with finite nonzero norm")
        object.__setattr__(self, "values", v / norm)

    @property
    def dim(self) -> int:
        return self.values.size

    def cosine(self, other: "EmbeddingVector") -> float:
        if other.dim != self.dim:
            raise InvalidInputError(f"embedding dim mismatch: {self.dim} vs {other.dim}")
        return float(self.values @ other.values)


@dataclass(frozen=True)
class LatentTensor:
    """Latent-space tensor, shape (channels, latent_height, latent_width)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise InvalidInputError(f"latent must be (C, h, w), got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def latent_height(self) -> int:
        return self.values.shape[1]

    @property
    def latent_width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class BackendDescriptor:
    """Identity record for a backend instance, stored in run manifests."""

    kind: str
    name: str
    deterministic: bool
    config: dict = field(default_factory=dict)

    KINDS = (
        "vllm",
        "text-embedder",
        "image-embedder",
        "segmenter",
        "inpainter",
        "captioner",
        "feature-extractor",
        "projector",
    )

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidInputError(f"unknown backend kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "deterministic": self.deterministic,
            "config": dict(self.config),
        }


# ---------------------------------------------------------------------------
# deterministic hashing helpers


def _seeded_rng(seed: int, *parts: bytes) -> np.random.Generator:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for part in parts:
        h.update(len(part).to_bytes(4, "little"))
        h.update(part)
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


def image_bytes(image: np.ndarray) -> bytes:
    """Stable byte key for an image array (8-bit quantized)."""
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    shape = ",".join(str(s) for s in arr.shape).encode()
    return shape + b"|" + np.ascontiguousarray(quantized).tobytes()


# ---------------------------------------------------------------------------
# prompt templates


def builtin_template_dir() -> Path:
    return Path(str(resources.files("anomsynth").joinpath("data/templates")))


def load_templates(extra_dir: str | Path | None = None) -> dict[str, str]:
    """Template registry: bundled templates plus an optional user directory."""
    registry: dict[str, str] = {}
    dirs = [builtin_template_dir()]
    if extra_dir is not None:
        dirs.append(Path(extra_dir))
    for d in dirs:
        if not d.is_dir():
            continue
        for path in sorted(d.glob("*.txt")):
            registry[path.stem] = path.read_text().strip()
    return registry


def render_template(template: str, object_name: str) -> str:
    return template.replace("{object}", object_name)


# ---------------------------------------------------------------------------
# protocols


class VLLMBackend(Protocol):
    descriptor: BackendDescriptor

    def answer(self, question: str, image: np.ndarray | None) -> str: ...


class TextEmbedder(Protocol):
    descriptor: BackendDescriptor

    def embed_text(self, text: str) -> EmbeddingVector: ...


class ImageEmbedder(Protocol):
    descriptor: BackendDescriptor

    def embed_image(self, image: np.ndarray) -> EmbeddingVector: ...


class Segmenter(Protocol):
    descriptor: BackendDescriptor

    def segment_foreground(self, image: np.ndarray) -> BinaryMask: ...


class LatentCodec(Protocol):
    descriptor: BackendDescriptor
    downscale: int

    def encode(self, image: np.ndarray) -> LatentTensor: ...

    def decode(self, latent: LatentTensor) -> np.ndarray: ...


class NoisePredictor(Protocol):
    descriptor: BackendDescriptor

    def predict_noise(
        self,
        z_t: LatentTensor,
        t: int,
        m_in: BinaryMask,
        x_texture: np.ndarray,
        prompt: str,
    ) -> LatentTensor: ...


class FeatureExtractor(Protocol):
    descriptor: BackendDescriptor

    def extract_features(self, images: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]: ...


class Captioner(Protocol):
    descriptor: BackendDescriptor

    def caption(self, image: np.ndarray, hint: str | None = None) -> str: ...


class Projector(Protocol):
    descriptor: BackendDescriptor

    def project(self, features: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# answer parsing


_STRIP_CHARS = " \t\r\n.!?\"'`“”‘’"


def parse_answer(raw: str) -> list[str]:
    """Normalize a model answer into short description phrases.

    Splits on commas/semicolons/newlines, trims surrounding punctuation,
    lowercases, drops empties, and deduplicates preserving order.
    """
    seen: set[str] = set()
    out: list[str] = []
    for chunk in raw.replace(";", ",").replace("\n", ",").split(","):
        token = chunk.strip(_STRIP_CHARS).lower()
        if token and token not in seen:
            seen.add(token)
            out.append(token)
    if not out:
        raise ParseError("no descriptions found in answer", raw=raw)
    return out


def vllm_query(
    backend: VLLMBackend,
    object_name: str,
    normal_image: np.ndarray | None,
    template_id: str,
    templates: dict[str, str] | None = None,
) -> tuple[list[str], str]:
    """Ask the VLLM for anomaly descriptions; returns (parsed list, raw answer)."""
    registry = templates if templates is not None else load_templates()
    if template_id not in registry:
        raise InvalidInputError(f"unknown template id {template_id!r}")
    question = render_template(registry[template_id], object_name)
    raw = backend.answer(question, normal_image)
    return parse_answer(raw), raw


# ---------------------------------------------------------------------------
# mock backends


class MockVLLM:
    """Deterministic stand-in for a hosted vision-language model.

    Known objects get canned answers; anything else draws two defect words
    from a fixed vocabulary, keyed by a hash of the question and seed.
    """

    ANSWERS = {"cashew": "cracked, moldy"}
    VOCABULARY = (
        "cracked",
        "scratched",
        "faded",
        "dented",
        "stained",
        "moldy",
        "chipped",
        "discolored",
    )

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind="vllm", name="mock-vllm", deterministic=True, config={"seed": seed}
        )

    def answer(self, question: str, image: np.ndarray | None) -> str:
        lowered = question.lower()
        for key, canned in self.ANSWERS.items():
            if key in lowered:
                return canned
        rng = _seeded_rng(self.seed, b"vllm", question.encode())
        picks = rng.choice(len(self.VOCABULARY), size=2, replace=False)
        return ", ".join(self.VOCABULARY[i] for i in sorted(picks))


class HashTextEmbedder:
    """Seeded hash-to-vector embedder; same string always maps to the same vector."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind="text-embedder",
            name="mock-hash-text",
            deterministic=True,
            config={"dim": dim, "seed": seed},
        )

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise InvalidInputError("cannot embed empty text")
        rng = _seeded_rng(self.seed, b"text", text.encode())
        return EmbeddingVector(rng.standard_normal(self.dim))


class HashImageEmbedder:
    """Seeded hash-to-vector embedder over quantized image bytes."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind="image-embedder",
            name="mock-hash-image",
            deterministic=True,
            config={"dim": dim, "seed": seed},
        )

    def embed_image(self, image: np.ndarray) -> EmbeddingVector:
        arr = np.asarray(image)
        if arr.size == 0:
            raise InvalidInputError("cannot embed empty image")
        rng = _seeded_rng(self.seed, b"image", image_bytes(arr))
        return EmbeddingVector(rng.standard_normal(self.dim))


class ThresholdSegmenter:
    """Luminance threshold as a deterministic foreground segmenter."""

    def __init__(self, threshold: float = 0.5):
        self.threshold = threshold
        self.descriptor = BackendDescriptor(
            kind="segmenter",
            name="mock-threshold",
            deterministic=True,
            config={"threshold": threshold},
        )

    def segment_foreground(self, image: np.ndarray) -> BinaryMask:
        gray = to_gray(image)
        return BinaryMask(gray.values > self.threshold)


def _tree_sum(a: np.ndarray) -> np.ndarray:
    """Balanced pairwise sum over the last axis.

    Adding equal partial sums keeps block averages of constant blocks exact,
    so the mock codec round-trips block-constant images bit-for-bit.
    """
    n = a.shape[-1]
    while n > 1:
        half = n // 2
        paired = a[..., 0 : 2 * half : 2] + a[..., 1 : 2 * half : 2]
        if n % 2:
            paired = np.concatenate([paired, a[..., -1:]], axis=-1)
        a = paired
        n = a.shape[-1]
    return a[..., 0]


class BlockCodec:
    """Area-average downsample / nearest-neighbor upsample latent codec.

    Round-trips 8x8-block-constant images exactly, which makes latent
    geometry and mask alignment testable without a real autoencoder.
    """

    def __init__(self, downscale: int = LATENT_DOWNSCALE):
        self.downscale = downscale
        self.descriptor = BackendDescriptor(
            kind="inpainter",
            name="mock-block-codec",
            deterministic=True,
            config={"downscale": downscale},
        )

    def encode(self, image: np.ndarray) -> LatentTensor:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        f = self.downscale
        if h % f or w % f:
            raise InvalidInputError(f"image dims {h}x{w} not divisible by {f}")
        blocks = arr.reshape(h // f, f, w // f, f, c).transpose(0, 2, 4, 1, 3).reshape(h // f, w // f, c, f * f)
        pooled = _tree_sum(blocks) / (f * f)
        return LatentTensor(pooled.transpose(2, 0, 1))

    def decode(self, latent: LatentTensor) -> np.ndarray:
        v = latent.values.transpose(1, 2, 0)
        up = np.repeat(np.repeat(v, self.downscale, axis=0), self.downscale, axis=1)
        return up if up.shape[2] > 1 else up[:, :, 0]


def _check_conditioning_shapes(z_t: LatentTensor, m_in: BinaryMask, x_texture: np.ndarray, downscale: int) -> None:
    img_h, img_w = z_t.latent_height * downscale, z_t.latent_width * downscale
    if (m_in.height, m_in.width) != (img_h, img_w):
        raise InvalidInputError(f"inpainting mask {m_in.height}x{m_in.width} does not match image space {img_h}x{img_w}")
    tex = np.asarray(x_texture)
    if tex.shape[:2] != (img_h, img_w):
        raise InvalidInputError(f"texture {tex.shape[:2]} does not match image space ({img_h}, {img_w})")


class ZeroNoisePredictor:
    """Predicts zero noise everywhere; useful for pure-trajectory tests."""

    def __init__(self, downscale: int = LATENT_DOWNSCALE, total_steps: int = 20):
        self.downscale = downscale
        self.total_steps = total_steps
        self.descriptor = BackendDescriptor(
            kind="inpainter", name="mock-zero-noise", deterministic=True, config={}
        )

    def predict_noise(self, z_t, t, m_in, x_texture, prompt):
        if not (1 <= t <= self.total_steps):
            raise InvalidInputError(f"timestep {t} outside [1, {self.total_steps}]")
        _check_conditioning_shapes(z_t, m_in, x_texture, self.downscale)
        return LatentTensor(np.zeros_like(z_t.values))


class OracleNoisePredictor:
    """Returns the exact noise recorded at noising time.

    The synthesis loop calls :meth:`record_noise` with the sampled epsilon;
    subsequent predictions return it verbatim, so the denoising chain
    inverts the add-noise chain exactly.
    """

    wants_noise_recording = True

    def __init__(self, downscale: int = LATENT_DOWNSCALE, total_steps: int = 20):
        self.downscale = downscale
        self.total_steps = total_steps
        self._eps: np.ndarray | None = None
        self.descriptor = BackendDescriptor(
            kind="inpainter", name="mock-oracle-noise", deterministic=True, config={}
        )

    def record_noise(self, eps: np.ndarray) -> None:
        self._eps = np.array(eps, dtype=np.float64, copy=True)

    def predict_noise(self, z_t, t, m_in, x_texture, prompt):
        if not (1 <= t <= self.total_steps):
            raise InvalidInputError(f"timestep {t} outside [1, {self.total_steps}]")
        _check_conditioning_shapes(z_t, m_in, x_texture, self.downscale)
        if self._eps is None:
            raise InvalidInputError("oracle predictor has no recorded noise")
        if self._eps.shape != z_t.values.shape:
            raise InvalidInputError("recorded noise shape does not match latent")
        return LatentTensor(self._eps)


class MockFeatureExtractor:
    """Seeded per-image class probabilities and perceptual feature vectors."""

    def __init__(self, n_classes: int = 10, feature_dim: int = 32, seed: int = 0):
        self.n_classes = n_classes
        self.feature_dim = feature_dim
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind="feature-extractor",
            name="mock-features",
            deterministic=True,
            config={"n_classes": n_classes, "feature_dim": feature_dim, "seed": seed},
        )

    def extract_features(self, images: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
        if len(images) == 0:
            raise InvalidInputError("need at least one image")
        probs = np.empty((len(images), self.n_classes))
        feats = np.empty((len(images), self.feature_dim))
        for i, img in enumerate(images):
            rng = _seeded_rng(self.seed, b"features", image_bytes(np.asarray(img)))
            logits = rng.standard_normal(self.n_classes)
            e = np.exp(logits - logits.max())
            probs[i] = e / e.sum()
            feats[i] = rng.standard_normal(self.feature_dim)
        return probs, feats


class MockCaptioner:
    """Caption mock: echoes the category hint or a short content key."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.descriptor = BackendDescriptor(
            kind="captioner", name="mock-captioner", deterministic=True, config={"seed": seed}
        )

    def caption(self, image: np.ndarray, hint: str | None = None) -> str:
        if hint:
            return f"texture: {hint}"
        digest = hashlib.blake2b(image_bytes(np.asarray(image)), digest_size=4).hexdigest()
        return f"texture: {digest}"


class PcaProjector:
    """Deterministic 2-D projection via principal components.

    Stands in for a t-SNE-class projector; sign convention is fixed so the
    output is reproducible across runs.
    """

    def __init__(self):
        self.descriptor = BackendDescriptor(
            kind="projector", name="mock-pca", deterministic=True, config={}
        )

    def project(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise InvalidInputError("features must be a nonempty N x D matrix")
        centered = x - x.mean(axis=0, keepdims=True)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        comps = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((2 - vt.shape[0], x.shape[1]))])
        # fix sign: largest-magnitude loading of each component is positive
        for row in comps:
            j = int(np.argmax(np.abs(row)))
            if row[j] < 0:
                row *= -1
        return centered @ comps.T


# ---------------------------------------------------------------------------
# live adapters


class ChatCompletionsVLLM:
    """Thin adapter for a hosted chat-completions-style VLLM endpoint.

    The API key comes from an environment variable; transient failures are
    retried with exponential backoff before raising a transport error.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "ANOMSYNTH_VLLM_API_KEY",
        retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.descriptor = BackendDescriptor(
            kind="vllm",
            name=f"chat:{model}",
            deterministic=False,
            config={"endpoint": endpoint, "model": model},
        )

    def _image_payload(self, image: np.ndarray) -> dict:
        buf = io.BytesIO()
        save_image(buf, image)
        data = base64.b64encode(buf.getvalue()).decode()
        return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{data}"}}

    def answer(self, question: str, image: np.ndarray | None) -> str:
        import httpx

        content: list[dict] = [{"type": "text", "text": question}]
        if image is not None:
            content.append(self._image_payload(image))
        payload = {"model": self.model, "messages": [{"role": "user", "content": content}]}
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"

        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = httpx.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                last_error = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(f"VLLM endpoint unreachable: {last_error}", retries=self.retries)


# ---------------------------------------------------------------------------
# suite


@dataclass
class BackendSuite:
    """All backends a run needs, bundled with their descriptors."""

    vllm: VLLMBackend
    text_embedder: TextEmbedder
    image_embedder: ImageEmbedder
    segmenter: Segmenter
    codec: LatentCodec
    noise: NoisePredictor
    features: FeatureExtractor
    captioner: Captioner
    projector: Projector

    def descriptors(self) -> list[dict]:
        return [
            b.descriptor.to_dict()
            for b in (
                self.vllm,
                self.text_embedder,
                self.image_embedder,
                self.segmenter,
                self.codec,
                self.noise,
                self.features,
                self.captioner,
                self.projector,
            )
        ]


def mock_suite(
    seed: int = 0,
    embed_dim: int = 16,
    segmenter_threshold: float = 0.5,
    noise_mode: str = "oracle",
    total_steps: int = 20,
    n_classes: int = 10,
    feature_dim: int = 32,
) -> BackendSuite:
    """Build the all-mock suite used by tests and desk-scale runs."""
    if noise_mode == "oracle":
        noise: NoisePredictor = OracleNoisePredictor(total_steps=total_steps)
    elif noise_mode == "zero":
        noise = ZeroNoisePredictor(total_steps=total_steps)
    else:
        raise InvalidInputError(f"unknown noise mode {noise_mode!r}")
    return BackendSuite(
        vllm=MockVLLM(seed=seed),
        text_embedder=HashTextEmbedder(dim=embed_dim, seed=seed),
        image_embedder=HashImageEmbedder(dim=embed_dim, seed=seed),
        segmenter=ThresholdSegmenter(threshold=segmenter_threshold),
        codec=BlockCodec(),
        noise=noise,
        features=MockFeatureExtractor(n_classes=n_classes, feature_dim=feature_dim, seed=seed),
        captioner=MockCaptioner(seed=seed),
        projector=PcaProjector(),
    )
