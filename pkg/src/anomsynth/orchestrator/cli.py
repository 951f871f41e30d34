"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 backend/transport error,
4 mask generation exhausted its retry budget, 1 anything else.
"""

from __future__ import annotations

import functools
import json
from pathlib import Path

import click

from .. import descmatch
from ..errors import (
    AnomSynthError,
    ConfigError,
    GenerationFailedError,
    TransportError,
)
from ..imageops import load_image
from ..texlib import TextureLibrary
from .config import RunConfig
from .runner import eval_run, format_sweep_table, sweep_tstar, synth_run, viz_runs


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, TransportError):
        return 3
    if isinstance(exc, GenerationFailedError):
        return 4
    return 1


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AnomSynthError as exc:
            click.echo(f"error [{fn.__name__}]: {exc}", err=True)
            raise SystemExit(_exit_code(exc))

    return wrapper


def _load_config(ctx) -> RunConfig:
    path = ctx.obj.get("config_path")
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)


def _library_root(ctx, lib: str | None) -> Path:
    if lib is not None:
        return Path(lib)
    cfg = _load_config(ctx)
    return cfg.path("library", "library")


def _open_library(root: Path, create: bool = False) -> TextureLibrary:
    if (root / "manifest.json").exists():
        return TextureLibrary.load(root)
    if create:
        return TextureLibrary(root)
    raise ConfigError(f"no library manifest at {root}")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config JSON.")
@click.pass_context
def main(ctx, config_path):
    """Zero-shot industrial anomaly synthesis toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


# ---------------------------------------------------------------------------
# texture library


@main.group(name="texlib")
def texlib_group():
    """Texture library construction and curation."""


@texlib_group.command()
@click.option("--category", required=True)
@click.option("--src", "source_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--lib", default=None, type=click.Path())
@click.pass_context
@handle_errors
def ingest(ctx, category, source_dir, lib):
    """Register candidate images of one category as pending assets."""
    library = _open_library(_library_root(ctx, lib), create=True)
    result = library.ingest(category, source_dir)
    library.save()
    click.echo(
        f"ingested {result.added} new assets "
        f"({result.skipped_duplicates} duplicates, {result.skipped_non_images} non-images skipped)"
    )


@texlib_group.command()
@click.option("--lib", default=None, type=click.Path())
@click.pass_context
@handle_errors
def clean(ctx, lib):
    """Auto-reject pending assets with out-of-bounds edge density."""
    library = _open_library(_library_root(ctx, lib))
    counts = library.clean_pending()
    library.save()
    click.echo(json.dumps(counts))


@texlib_group.command()
@click.option("--lib", default=None, type=click.Path())
@click.pass_context
@handle_errors
def embed(ctx, lib):
    """Compute and cache embeddings for accepted assets."""
    config = _load_config(ctx)
    library = _open_library(_library_root(ctx, lib))
    stats = library.build_embedding_cache(config.build_suite().image_embedder)
    library.save()
    click.echo(f"embedded {stats.computed} assets ({stats.hits} cache hits)")


@texlib_group.command()
@click.option("--lib", default=None, type=click.Path())
@click.pass_context
@handle_errors
def caption(ctx, lib):
    """Caption accepted assets that lack one."""
    config = _load_config(ctx)
    library = _open_library(_library_root(ctx, lib))
    count = library.caption_accepted(config.build_suite().captioner)
    library.save()
    click.echo(f"captioned {count} assets")


@texlib_group.command()
@click.option("--lib", default=None, type=click.Path())
@click.pass_context
@handle_errors
def stats(ctx, lib):
    """Counts by curation state and category."""
    library = _open_library(_library_root(ctx, lib))
    click.echo(json.dumps(library.stats(), indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# description and matching


@main.command()
@click.option("--object", "object_name", required=True)
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--template", "template_id", default="default")
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_context
@handle_errors
def describe(ctx, object_name, image_path, template_id, out_path):
    """Generate anomaly descriptions for one object via the VLLM backend."""
    config = _load_config(ctx)
    suite = config.build_suite()
    descs = descmatch.generate_descriptions(
        suite.vllm, object_name, load_image(image_path), template_id=template_id
    )
    rows = [d.to_dict() for d in descs]
    if out_path:
        descmatch.write_jsonl(out_path, rows)
    for row in rows:
        click.echo(json.dumps(row, sort_keys=True))


@main.command()
@click.option("--object", "object_name", required=True)
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--lib", default=None, type=click.Path())
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_context
@handle_errors
def match(ctx, object_name, image_path, lib, out_path):
    """Match each generated description to its closest texture asset."""
    config = _load_config(ctx)
    suite = config.build_suite()
    library = _open_library(_library_root(ctx, lib))
    pool = library.matching_pool()
    descs = descmatch.generate_descriptions(suite.vllm, object_name, load_image(image_path))
    results, failures = descmatch.match_all(descs, pool, suite.text_embedder)
    rows = [r.to_dict() for r in results]
    if out_path:
        descmatch.write_jsonl(out_path, rows)
    for row in rows:
        click.echo(json.dumps(row, sort_keys=True))
    if failures:
        click.echo(f"{len(failures)} descriptors failed to match", err=True)


# ---------------------------------------------------------------------------
# synthesis, sweep, metrics, projection


@main.command()
@click.option("--object", "object_name", required=True)
@click.option("--count", default=None, type=int, help="Records to generate (default from config, 500).")
@click.option("--seed", default=None, type=int)
@click.option("--t-star", "t_star", default=None, type=int)
@click.option("--steps", default=None, type=int)
@click.option("--out", "out_dir", default=None, type=click.Path())
@click.pass_context
@handle_errors
def synth(ctx, object_name, count, seed, t_star, steps, out_dir):
    """Synthesize anomaly images and masks for one object."""
    config = _load_config(ctx)
    count = count if count is not None else config.count
    seed = seed if seed is not None else config.seed
    if out_dir is None:
        out_dir = config.path("out", "out") / f"{object_name}-seed{seed}"
    summary = synth_run(config, object_name, count, seed, out_dir, t_star=t_star, steps=steps)
    click.echo(f"wrote {summary['records']} records to {summary['out']}")


@main.command(name="sweep-tstar")
@click.option("--values", default="12,14,16,18,20", help="Comma-separated T* values.")
@click.option("--object", "object_name", required=True)
@click.option("--count", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_root", default=None, type=click.Path())
@click.pass_context
@handle_errors
def sweep_tstar_cmd(ctx, values, object_name, count, seed, out_root):
    """Metric table over intermediate-timestep choices."""
    config = _load_config(ctx)
    count = count if count is not None else config.count
    seed = seed if seed is not None else config.seed
    if out_root is None:
        out_root = config.path("out", "out") / f"sweep-{object_name}"
    parsed = [int(v) for v in values.split(",") if v.strip()]
    rows = sweep_tstar(config, object_name, count, seed, parsed, out_root)
    click.echo(format_sweep_table(rows))


@main.command(name="eval")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.pass_context
@handle_errors
def eval_cmd(ctx, run_dir):
    """Quality/diversity metric report for a run directory."""
    config = _load_config(ctx)
    report = eval_run(run_dir, config.build_suite())
    click.echo(json.dumps(report, indent=2, sort_keys=True))


@main.command()
@click.option("--runs", "run_dirs", required=True, multiple=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_csv", required=True, type=click.Path())
@click.option("--reduce-to", "reduce_to", default=None, type=int)
@click.pass_context
@handle_errors
def viz(ctx, run_dirs, out_csv, reduce_to):
    """Export a 2-D projection of run feature distributions."""
    config = _load_config(ctx)
    out = viz_runs(list(run_dirs), config.build_suite(), out_csv, reduce_to=reduce_to, seed=config.seed)
    click.echo(f"wrote {out['rows']} rows to {out['csv']} (ellipses: {out['ellipses']})")


# ---------------------------------------------------------------------------
# curation service


@main.command()
@click.option("--port", default=8000, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--static", "static_dir", default=None, type=click.Path(file_okay=False))
@click.pass_context
@handle_errors
def serve(ctx, port, host, manifest_path, static_dir):
    """Run the curation HTTP service over one library manifest."""
    from .service import serve as run_service

    library = TextureLibrary.load(Path(manifest_path).parent)
    if static_dir is None:
        bundled = Path.cwd() / "frontend" / "dist"
        static_dir = bundled if bundled.is_dir() else None
    click.echo(f"serving curation API on http://{host}:{port}")
    run_service(library, host=host, port=port, static_dir=static_dir)


if __name__ == "__main__":
    main()
