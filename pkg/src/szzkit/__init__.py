"""Toolkit for finding the commits that introduced a bug, given the commit that fixed it.

Submodules: ``gitio`` (git access), ``szz`` (blame-based baselines),
``candidates`` (candidate sets, redaction, dumps), ``agent`` (tool-using
agent runtime), ``pipelines`` (agentic identification), ``evalkit``
(datasets, metrics, paired tests), ``tracekit`` (trace analytics) and
``cli``.
"""

__version__ = "0.1.0"
