"""Synthesis runs, metric evaluation, the intermediate-timestep sweep, and
the projection export, all working over on-disk run directories.

Run directory layout:
    <out>/<object>/<description>/<seq>.png        generated image
    <out>/<object>/<description>/<seq>_mask.png   refined anomaly mask
    <out>/<object>/<description>/<seq>.json       record metadata
    <out>/run.json                                run-level provenance
    <out>/transcript.txt                          raw VLLM answers

Everything written here is a pure function of (config, seed) under
deterministic backends; wall-clock timings go to the console only.
"""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .. import descmatch, maskgen, metrics, synthpipe
from ..backends import BackendSuite
from ..errors import ConfigError, NoCandidatesError
from ..imageops import load_image, save_image, save_mask
from ..texlib import TextureLibrary
from .config import RunConfig


def _canonical_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _library_fingerprint(library_root: Path) -> str | None:
    manifest = library_root / "manifest.json"
    if not manifest.exists():
        return None
    return hashlib.sha256(manifest.read_bytes()).hexdigest()


def task_seed(run_seed: int, index: int) -> int:
    return run_seed ^ index


def synth_run(
    config: RunConfig,
    object_name: str,
    count: int,
    seed: int,
    out_dir: str | Path,
    t_star: int | None = None,
    steps: int | None = None,
) -> dict:
    """Generate ``count`` anomaly records for one object into ``out_dir``."""
    steps = steps if steps is not None else config.steps
    t_star = t_star if t_star is not None else config.t_star
    suite = config.build_suite(steps=steps)

    library = TextureLibrary.load(config.path("library"))
    pool = library.matching_pool()
    if not pool:
        raise NoCandidatesError("texture library has no accepted, embedded assets")

    image_path = config.path("images") / f"{object_name}.png"
    if not image_path.exists():
        raise ConfigError(f"no normal image for object {object_name!r} at {image_path}")
    normal_image = load_image(image_path)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    transcript = descmatch.TranscriptLog(out / "transcript.txt")
    descriptors = descmatch.generate_descriptions(
        suite.vllm, object_name, normal_image, transcript=transcript
    )
    matches, failures = descmatch.match_all(descriptors, pool, suite.text_embedder)
    if not matches:
        raise NoCandidatesError(f"no descriptor could be matched ({len(failures)} failures)")

    schedule = synthpipe.NoiseSchedule.cosine(steps)
    syn_config = synthpipe.SynthesisConfig(
        t_star=t_star, schedule=schedule, prompt_template=config.prompt_template
    )
    mask_config = config.maskgen_config()
    descriptors_summary = [m.to_dict() for m in matches]

    written = []
    for i in range(count):
        match = matches[i % len(matches)]
        rng = np.random.default_rng(task_seed(seed, i))
        texture = load_image(library.assets[match.asset_id].image_path)
        bundle = maskgen.generate(
            normal_image,
            texture,
            mask_config,
            rng,
            suite.segmenter,
            canny_low=library.canny_low,
            canny_high=library.canny_high,
        )
        record = synthpipe.synthesize(
            object_name,
            normal_image,
            match.descriptor.description,
            match.asset_id,
            match.similarity,
            bundle,
            syn_config,
            rng,
            suite.codec,
            suite.noise,
            seed=task_seed(seed, i),
            backend_descriptors=suite.descriptors(),
        )
        rec_dir = out / object_name / record.description
        rec_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{i:04d}"
        save_image(rec_dir / f"{stem}.png", record.x_result)
        save_mask(rec_dir / f"{stem}_mask.png", record.m_result)
        doc = record.to_dict()
        doc["image"] = f"{stem}.png"
        doc["mask"] = f"{stem}_mask.png"
        doc["rect"] = bundle.rect.to_dict()
        (rec_dir / f"{stem}.json").write_text(_canonical_json(doc))
        written.append(str(rec_dir / f"{stem}.png"))

    run_doc = {
        "object": object_name,
        "count": count,
        "seed": seed,
        "t_star": t_star,
        "steps": steps,
        "prompt_template": config.prompt_template,
        "maskgen": mask_config.to_dict(),
        "schedule": schedule.to_dict(),
        "backend_descriptors": suite.descriptors(),
        "library_manifest_sha256": _library_fingerprint(config.path("library")),
        "descriptors": descriptors_summary,
    }
    (out / "run.json").write_text(_canonical_json(run_doc))
    return {"records": len(written), "out": str(out)}


def load_run_records(run_dir: str | Path) -> list[dict]:
    """All record metadata in a run directory, with resolved image paths."""
    run_dir = Path(run_dir)
    records = []
    for meta_path in sorted(run_dir.glob("*/*/*.json")):
        doc = json.loads(meta_path.read_text())
        doc["image_path"] = str(meta_path.parent / doc["image"])
        doc["mask_path"] = str(meta_path.parent / doc["mask"])
        records.append(doc)
    return records


def eval_run(run_dir: str | Path, suite: BackendSuite) -> dict:
    """Per-category quality/diversity metrics for one run directory."""
    records = load_run_records(run_dir)
    if not records:
        raise ConfigError(f"no records found under {run_dir}")

    images = [load_image(r["image_path"]) for r in records]
    probs, feats = suite.features.extract_features(images)

    by_category: dict[str, list[int]] = defaultdict(list)
    by_cluster: dict[tuple[str, str], list[int]] = defaultdict(list)
    for idx, rec in enumerate(records):
        by_category[rec["object_name"]].append(idx)
        by_cluster[(rec["object_name"], rec["description"])].append(idx)

    categories = {}
    for cat, idxs in sorted(by_category.items()):
        cat_probs = probs[idxs]
        cluster_feats = [
            feats[cidx]
            for (obj, _), cidx in by_cluster.items()
            if obj == cat and len(cidx) >= 2
        ]
        is_score = metrics.inception_score(cat_probs)
        il_score = (
            metrics.dataset_intra_cluster_distance(cluster_feats) if cluster_feats else None
        )
        categories[cat] = {
            "is": round(is_score, 2),
            "il": round(il_score, 2) if il_score is not None else None,
            "count": len(idxs),
        }

    is_values = [c["is"] for c in categories.values()]
    il_values = [c["il"] for c in categories.values() if c["il"] is not None]
    report = {
        "categories": categories,
        "average": {
            "is": round(float(np.mean(is_values)), 2),
            "il": round(float(np.mean(il_values)), 2) if il_values else None,
        },
    }
    (Path(run_dir) / "metrics.json").write_text(_canonical_json(report))
    return report


def sweep_tstar(
    config: RunConfig,
    object_name: str,
    count: int,
    seed: int,
    values: list[int],
    out_root: str | Path,
) -> list[dict]:
    """Synthesize and score one run per intermediate-timestep choice."""
    out_root = Path(out_root)
    rows = []
    for value in values:
        run_dir = out_root / f"tstar_{value}"
        synth_run(config, object_name, count, seed, run_dir, t_star=value)
        report = eval_run(run_dir, config.build_suite())
        rows.append(
            {
                "t_star": value,
                "is": report["average"]["is"],
                "il": report["average"]["il"],
                "run_dir": str(run_dir),
            }
        )
    (out_root / "sweep.json").write_text(_canonical_json({"rows": rows}))
    return rows


def format_sweep_table(rows: list[dict]) -> str:
    """Sweep results as a compact choice/IS/IL table."""
    header = "Choice    " + "".join(f"T*={r['t_star']:<8}" for r in rows)
    body = "IS/IL     " + "".join(
        f"{r['is']:.2f}/{r['il']:.2f}   " if r["il"] is not None else f"{r['is']:.2f}/--     "
        for r in rows
    )
    return header + "\n" + body


def viz_runs(
    run_dirs: list[str | Path],
    suite: BackendSuite,
    out_csv: str | Path,
    reduce_to: int | None = None,
    seed: int = 0,
) -> dict:
    """Project every run's image features into 2-D for distribution plots."""
    groups: dict[str, np.ndarray] = {}
    for run_dir in run_dirs:
        records = load_run_records(run_dir)
        if not records:
            raise ConfigError(f"no records found under {run_dir}")
        images = [load_image(r["image_path"]) for r in records]
        _, feats = suite.features.extract_features(images)
        groups[Path(run_dir).name] = feats
    return metrics.export_projection(
        groups,
        suite.projector,
        out_csv,
        reduce_to=reduce_to,
        rng=np.random.default_rng(seed),
    )
