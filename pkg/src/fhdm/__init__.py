"""First-hitting diffusion models on the unit sphere.

Submodules: geometry, kernels, paths, spectral, model, training, sampler,
evaluation, config, oracle_check, cli.
"""
__version__ = "0.1.0"
