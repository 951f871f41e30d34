import numpy as np
import pytest

from anomsynth.imageops import save_image


def noisy_texture(rng, size=48):
    """Random texture image with plenty of edges (passes density cleaning)."""
    base = rng.random((size // 8, size // 8, 3))
    img = np.repeat(np.repeat(base, 8, axis=0), 8, axis=1)
    img = np.clip(img + rng.normal(0, 0.15, img.shape), 0, 1)
    return img


def flat_texture(level=0.5, size=48):
    return np.full((size, size, 3), level)


@pytest.fixture
def texture_dir(tmp_path):
    """Directory of 5 decodable texture images plus one non-image file."""
    rng = np.random.default_rng(42)
    d = tmp_path / "textures"
    d.mkdir()
    for i in range(5):
        save_image(d / f"tex_{i}.png", noisy_texture(rng))
    (d / "notes.txt").write_text("not an image")
    return d
