"""Configuration, experiment orchestration, outputs and the command line."""
