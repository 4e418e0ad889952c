"""Benchmark bilevel problems and dataset readers."""
