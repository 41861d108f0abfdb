"""Experiment orchestration: configuration, scenarios, run loop, metrics and the CLI."""
