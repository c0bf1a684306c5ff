"""Workbench for two typed nondeterministic calculi and their translation."""
