"""Experiment configuration, recipes and the ``iqfed`` command line."""
