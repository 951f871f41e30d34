"""Run configuration, CLI, synthesis runner, and the curation HTTP service."""
