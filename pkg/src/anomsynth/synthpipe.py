"""Latent synthesis: noise schedule, masked latent init, DDIM loop, refinement.

One synthesis call encodes the normal image and the adaptive texture, noises
both to an intermediate timestep with a single shared epsilon, blends them
under the latent texture mask, denoises deterministically with the
conditioned noise predictor, decodes, and shrinks the inpainting mask to the
pixels that actually changed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backends import LatentCodec, LatentTensor, NoisePredictor
from .errors import InvalidInputError
from .imageops import BinaryMask, GrayImage, ssim_map, to_gray
from .maskgen import MaskBundle

DEFAULT_STEPS = 20
DEFAULT_T_STAR = 16
DEFAULT_PROMPT_TEMPLATE = "A photo of {description} {object}"


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention sequence alphabar_0..alphabar_T.

    alphabar_0 is pinned to 1 and the sequence must be strictly decreasing
    within (0, 1].
    """

    alphabar: np.ndarray
    schedule_kind: str = "custom"

    def __post_init__(self):
        a = np.asarray(self.alphabar, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise InvalidInputError("schedule needs alphabar_0..alphabar_T with T >= 1")
        if a[0] != 1.0:
            raise InvalidInputError(f"alphabar_0 must be 1, got {a[0]}")
        if not np.all(np.diff(a) < 0):
            raise InvalidInputError("alphabar must be strictly decreasing")
        if a[-1] <= 0.0 or np.any(a > 1.0):
            raise InvalidInputError("alphabar values must lie in (0, 1]")
        object.__setattr__(self, "alphabar", a)

    @property
    def total_steps(self) -> int:
        return self.alphabar.size - 1

    @classmethod
    def cosine(cls, total_steps: int = DEFAULT_STEPS) -> "NoiseSchedule":
        t = np.arange(total_steps + 1, dtype=np.float64)
        a = np.cos(0.5 * np.pi * t / (total_steps + 1)) ** 2
        a[0] = 1.0
        return cls(alphabar=a, schedule_kind="cosine")

    def to_dict(self) -> dict:
        return {"schedule_kind": self.schedule_kind, "alphabar": self.alphabar.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(alphabar=np.array(d["alphabar"]), schedule_kind=d["schedule_kind"])


@dataclass
class SynthesisConfig:
    t_star: int = DEFAULT_T_STAR
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.cosine)
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        # t_star == total_steps means denoising from the fully-noised latent;
        # the sweep harness includes it as the strongest-inpainting choice
        if not (0 < self.t_star <= self.schedule.total_steps):
            raise InvalidInputError(
                f"need 0 < t_star <= {self.schedule.total_steps}, got {self.t_star}"
            )

    def to_dict(self) -> dict:
        return {
            "t_star": self.t_star,
            "schedule": self.schedule.to_dict(),
            "prompt_template": self.prompt_template,
            "options": dict(self.options),
        }


@dataclass
class SynthesisRecord:
    """One generated anomaly with full provenance.

    ``timings`` is measured wall-clock and intentionally excluded from
    serialization so run directories stay byte-reproducible.
    """

    object_name: str
    description: str
    asset_id: str
    x_result: np.ndarray
    m_result: BinaryMask
    m_in: BinaryMask
    seed: int | None
    t_star: int
    prompt: str
    similarity: float
    retries_used: int
    schedule: NoiseSchedule
    backend_descriptors: list[dict]
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "object_name": self.object_name,
            "description": self.description,
            "asset_id": self.asset_id,
            "seed": self.seed,
            "t_star": self.t_star,
            "prompt": self.prompt,
            "similarity": self.similarity,
            "retries_used": self.retries_used,
            "schedule": self.schedule.to_dict(),
            "backend_descriptors": self.backend_descriptors,
            "mask_area": self.m_result.area,
            "inpaint_area": self.m_in.area,
        }


# ---------------------------------------------------------------------------
# core formulas


def noise_mix(z: np.ndarray, alpha_bar: float, eps: np.ndarray) -> np.ndarray:
    """sqrt(alphabar)*z + sqrt(1-alphabar)*eps, the forward noising formula."""
    if z.shape != eps.shape:
        raise InvalidInputError(f"shape mismatch: {z.shape} vs {eps.shape}")
    return np.sqrt(alpha_bar) * z + np.sqrt(1.0 - alpha_bar) * eps


def add_noise(z: LatentTensor, t: int, eps: LatentTensor, schedule: NoiseSchedule) -> LatentTensor:
    """Noise a clean latent to timestep t."""
    if not (0 <= t <= schedule.total_steps):
        raise InvalidInputError(f"timestep {t} outside [0, {schedule.total_steps}]")
    return LatentTensor(noise_mix(z.values, float(schedule.alphabar[t]), eps.values))


def tali_blend(z_n_tstar: LatentTensor, z_tex_tstar: LatentTensor, m_latent: BinaryMask) -> LatentTensor:
    """Elementwise select: texture latent where the mask is true, else normal."""
    if z_n_tstar.values.shape != z_tex_tstar.values.shape:
        raise InvalidInputError("latent shapes differ")
    if (m_latent.height, m_latent.width) != (z_n_tstar.latent_height, z_n_tstar.latent_width):
        raise InvalidInputError("latent mask does not match latent spatial dims")
    blended = np.where(m_latent.bits[None, :, :], z_tex_tstar.values, z_n_tstar.values)
    return LatentTensor(blended)


def ddim_math(z_t: np.ndarray, abar_t: float, abar_prev: float, eps_hat: np.ndarray) -> np.ndarray:
    """One deterministic (eta=0) reverse step from abar_t to abar_prev."""
    if z_t.shape != eps_hat.shape:
        raise InvalidInputError(f"shape mismatch: {z_t.shape} vs {eps_hat.shape}")
    x0 = (z_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    return np.sqrt(abar_prev) * x0 + np.sqrt(1.0 - abar_prev) * eps_hat


def ddim_step(z_t: LatentTensor, t: int, eps_hat: LatentTensor, schedule: NoiseSchedule) -> LatentTensor:
    """Deterministic DDIM update z_t -> z_{t-1}."""
    if not (1 <= t <= schedule.total_steps):
        raise InvalidInputError(f"timestep {t} outside [1, {schedule.total_steps}]")
    a_t = float(schedule.alphabar[t])
    a_prev = float(schedule.alphabar[t - 1])
    return LatentTensor(ddim_math(z_t.values, a_t, a_prev, eps_hat.values))


# ---------------------------------------------------------------------------
# mask refinement


def refine_mask(
    x_normal: np.ndarray,
    x_result: np.ndarray,
    m_in: BinaryMask,
    polarity: str = "dissimilar",
) -> BinaryMask:
    """Shrink the inpainting mask to pixels that changed more than average.

    The similarity map is computed on the masked images (content outside
    ``m_in`` zeroed), so nothing outside the inpainting region can influence
    the result. The default polarity keeps pixels whose dissimilarity
    exceeds the in-region mean; ``polarity="similar"`` inverts the reading.
    """
    if m_in.area == 0:
        raise InvalidInputError("inpainting mask is empty")
    a = to_gray(np.clip(x_normal, 0.0, 1.0)).values * m_in.bits
    b = to_gray(np.clip(x_result, 0.0, 1.0)).values * m_in.bits
    score = ssim_map(GrayImage(a), GrayImage(b))
    diff = 1.0 - score
    mean_diff = diff[m_in.bits].mean()
    if polarity == "dissimilar":
        keep = diff > mean_diff
    elif polarity == "similar":
        keep = diff < mean_diff
    else:
        raise InvalidInputError(f"unknown polarity {polarity!r}")
    return BinaryMask(keep & m_in.bits)


# ---------------------------------------------------------------------------
# full synthesis


def render_prompt(template: str, description: str, object_name: str) -> str:
    return template.replace("{description}", description).replace("{object}", object_name)


def synthesize(
    object_name: str,
    normal_image: np.ndarray,
    description: str,
    asset_id: str,
    similarity: float,
    bundle: MaskBundle,
    config: SynthesisConfig,
    rng: np.random.Generator,
    codec: LatentCodec,
    noise_predictor: NoisePredictor,
    seed: int | None = None,
    backend_descriptors: list[dict] | None = None,
) -> SynthesisRecord:
    """Run the full latent pipeline for one (image, texture, mask) triple."""
    timings: dict[str, float] = {}
    start = time.perf_counter()

    z_n = codec.encode(normal_image)
    z_tex = codec.encode(bundle.x_texture)
    timings["encode"] = time.perf_counter() - start

    eps = LatentTensor(rng.standard_normal(z_n.values.shape))
    if getattr(noise_predictor, "wants_noise_recording", False):
        noise_predictor.record_noise(eps.values)

    t_star = config.t_star
    z_n_t = add_noise(z_n, t_star, eps, config.schedule)
    z_tex_t = add_noise(z_tex, t_star, eps, config.schedule)
    z = tali_blend(z_n_t, z_tex_t, bundle.m_texture_latent)

    prompt = render_prompt(config.prompt_template, description, object_name)

    loop_start = time.perf_counter()
    for t in range(t_star, 0, -1):
        eps_hat = noise_predictor.predict_noise(z, t, bundle.m_in, bundle.x_texture, prompt)
        z = ddim_step(z, t, eps_hat, config.schedule)
    timings["denoise"] = time.perf_counter() - loop_start

    x_result = np.clip(codec.decode(z), 0.0, 1.0)
    m_result = refine_mask(normal_image, x_result, bundle.m_in)
    timings["total"] = time.perf_counter() - start

    return SynthesisRecord(
        object_name=object_name,
        description=description,
        asset_id=asset_id,
        x_result=x_result,
        m_result=m_result,
        m_in=bundle.m_in,
        seed=seed,
        t_star=t_star,
        prompt=prompt,
        similarity=similarity,
        retries_used=bundle.retries_used,
        schedule=config.schedule,
        backend_descriptors=backend_descriptors or [],
        timings=timings,
    )
