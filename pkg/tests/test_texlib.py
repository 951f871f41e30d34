import json

import numpy as np
import pytest

from anomsynth import texlib
from anomsynth.backends import HashImageEmbedder, MockCaptioner
from anomsynth.errors import NotFoundError, StateConflictError, TaxonomyError
from anomsynth.imageops import save_image

from conftest import flat_texture, noisy_texture


def make_library(tmp_path, name="lib"):
    return texlib.TextureLibrary(tmp_path / name)


class TestTaxonomy:
    def test_default_has_75_unique_categories(self):
        tax = texlib.Taxonomy.default()
        assert len(tax.categories) == 75
        assert len(set(tax.categories)) == 75
        assert "cracked" in tax and "moldy" in tax

    def test_custom_file_roundtrip(self, tmp_path):
        p = tmp_path / "categories.txt"
        p.write_text("# comment\nalpha\nbeta\n")
        tax = texlib.Taxonomy.from_file(p)
        assert tax.categories == ["alpha", "beta"]


class TestCleanVerdict:
    @pytest.mark.parametrize(
        "density,expected",
        [
            (0.75, "auto_rejected(dense)"),
            (0.01, "auto_rejected(sparse)"),
            (0.10, "pass"),
            (0.02, "pass"),
            (0.70, "pass"),
            (0.019, "auto_rejected(sparse)"),
            (0.021, "pass"),
            (0.699, "pass"),
            (0.701, "auto_rejected(dense)"),
        ],
    )
    def test_bounds(self, density, expected):
        assert texlib.clean_verdict(density) == expected


class TestIngest:
    def test_ingest_counts_and_density(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        result = lib.ingest("cracked", texture_dir)
        assert result.added == 5
        assert result.skipped_non_images == 1
        for asset in lib.assets.values():
            assert asset.curation_state == "pending"
            assert 0.0 <= asset.edge_density <= 1.0
            assert asset.category == "cracked"

    def test_empty_directory_is_zero(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        lib = make_library(tmp_path)
        assert lib.ingest("cracked", empty).added == 0

    def test_duplicate_content_skipped(self, tmp_path):
        d = tmp_path / "src"
        d.mkdir()
        img = noisy_texture(np.random.default_rng(0))
        save_image(d / "a.png", img)
        save_image(d / "b.png", img)  # identical bytes
        lib = make_library(tmp_path)
        result = lib.ingest("cracked", d)
        assert result.added == 1
        assert result.skipped_duplicates == 1

    def test_unknown_category_rejected(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        with pytest.raises(TaxonomyError):
            lib.ingest("no-such-category", texture_dir)


class TestCuration:
    def _ingested(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        return lib

    def test_accept_flow(self, tmp_path, texture_dir):
        lib = self._ingested(tmp_path, texture_dir)
        aid = next(iter(lib.assets))
        asset = lib.decide(aid, "accept")
        assert asset.curation_state == "accepted"

    def test_reject_with_note(self, tmp_path, texture_dir):
        lib = self._ingested(tmp_path, texture_dir)
        aid = next(iter(lib.assets))
        asset = lib.decide(aid, "reject", note="blurry")
        assert asset.curation_state == "rejected"
        assert asset.decision_note == "blurry"
        lib.build_embedding_cache(HashImageEmbedder(dim=8))
        assert aid not in [a for a, _ in lib.matching_pool()]

    def test_double_decision_conflicts(self, tmp_path, texture_dir):
        lib = self._ingested(tmp_path, texture_dir)
        aid = next(iter(lib.assets))
        lib.decide(aid, "accept")
        with pytest.raises(StateConflictError):
            lib.decide(aid, "accept")

    def test_unknown_asset(self, tmp_path, texture_dir):
        lib = self._ingested(tmp_path, texture_dir)
        with pytest.raises(NotFoundError):
            lib.decide("missing", "accept")

    def test_auto_clean_sets_state(self, tmp_path):
        d = tmp_path / "src"
        d.mkdir()
        save_image(d / "flat.png", flat_texture())
        lib = make_library(tmp_path)
        lib.ingest("faded", d)
        counts = lib.clean_pending()
        assert counts["auto_rejected(sparse)"] == 1
        asset = next(iter(lib.assets.values()))
        assert asset.curation_state == "auto_rejected"
        with pytest.raises(StateConflictError):
            lib.decide(asset.asset_id, "accept")

    def test_auto_reject_iff_outside_bounds(self, tmp_path, texture_dir):
        lib = self._ingested(tmp_path, texture_dir)
        lib.clean_pending()
        for asset in lib.assets.values():
            outside = not (texlib.EDGE_DENSITY_MIN <= asset.edge_density <= texlib.EDGE_DENSITY_MAX)
            assert (asset.curation_state == "auto_rejected") == outside


class TestCaptions:
    def test_caption_accepted_is_idempotent(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        for aid in list(lib.assets):
            lib.decide(aid, "accept")
        captioner = MockCaptioner()
        assert lib.caption_accepted(captioner) == 5
        assert lib.caption_accepted(captioner) == 0
        for asset in lib.assets.values():
            assert asset.caption == "texture: cracked"


class TestEmbeddingCache:
    def _accepted_library(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        for aid in list(lib.assets):
            lib.decide(aid, "accept")
        return lib

    def test_cold_then_warm(self, tmp_path, texture_dir):
        lib = self._accepted_library(tmp_path, texture_dir)
        embedder = HashImageEmbedder(dim=8, seed=0)
        stats = lib.build_embedding_cache(embedder)
        assert stats.computed == 5 and stats.hits == 0
        stats = lib.build_embedding_cache(embedder)
        assert stats.computed == 0 and stats.hits == 5

    def test_backend_name_invalidates(self, tmp_path, texture_dir):
        from anomsynth.backends import BackendDescriptor

        lib = self._accepted_library(tmp_path, texture_dir)
        lib.build_embedding_cache(HashImageEmbedder(dim=8, seed=0))
        renamed = HashImageEmbedder(dim=8, seed=0)
        renamed.descriptor = BackendDescriptor(
            kind="image-embedder", name="other-embedder", deterministic=True
        )
        stats = lib.build_embedding_cache(renamed)
        assert stats.computed == 5

    def test_pool_is_accepted_with_embeddings(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        ids = list(lib.assets)
        lib.decide(ids[0], "accept")
        lib.decide(ids[1], "reject")
        lib.build_embedding_cache(HashImageEmbedder(dim=8))
        pool = lib.matching_pool()
        assert [aid for aid, _ in pool] == [ids[0]]
        vec = pool[0][1]
        assert np.linalg.norm(vec.values) == pytest.approx(1.0)

    def test_cache_survives_reload(self, tmp_path, texture_dir):
        lib = self._accepted_library(tmp_path, texture_dir)
        lib.build_embedding_cache(HashImageEmbedder(dim=8, seed=0))
        lib.save()
        again = texlib.TextureLibrary.load(lib.root)
        stats = again.build_embedding_cache(HashImageEmbedder(dim=8, seed=0))
        assert stats.computed == 0 and stats.hits == 5


class TestPersistence:
    def test_manifest_roundtrip(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        lib.clean_pending()
        aid = next(a for a, x in lib.assets.items() if x.curation_state == "pending")
        lib.decide(aid, "accept", note="ok")
        lib.save()
        again = texlib.TextureLibrary.load(lib.root)
        assert {a: x.to_dict() for a, x in again.assets.items()} == {
            a: x.to_dict() for a, x in lib.assets.items()
        }
        assert again.taxonomy.categories == lib.taxonomy.categories

    def test_decisions_replayed_without_snapshot(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        lib.save()
        aid = next(iter(lib.assets))
        lib.decide(aid, "accept")
        # no save() after the decision: reload must replay the log
        again = texlib.TextureLibrary.load(lib.root)
        assert again.assets[aid].curation_state == "accepted"

    def test_log_is_append_only_json(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        ids = list(lib.assets)
        lib.decide(ids[0], "accept")
        lib.decide(ids[1], "reject", note="dull")
        lines = [json.loads(l) for l in lib.log_path.read_text().splitlines()]
        assert [e["seq"] for e in lines] == [1, 2]
        assert lines[1]["note"] == "dull"


class TestQueueAndStats:
    def test_queue_filters_and_pagination(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        page, total = lib.queue(state="pending", limit=2, offset=0)
        assert total == 5 and len(page) == 2
        page2, _ = lib.queue(state="pending", limit=2, offset=4)
        assert len(page2) == 1
        none, total_other = lib.queue(state="pending", category="moldy")
        assert none == [] and total_other == 0

    def test_stats_counts(self, tmp_path, texture_dir):
        lib = make_library(tmp_path)
        lib.ingest("cracked", texture_dir)
        aid = next(iter(lib.assets))
        lib.decide(aid, "accept")
        s = lib.stats()
        assert s["total"] == 5
        assert s["by_state"]["pending"] == 4
        assert s["by_state"]["accepted"] == 1
        assert s["by_category"]["cracked"]["accepted"] == 1
