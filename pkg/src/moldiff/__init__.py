"""Multi-conditional discrete diffusion over molecular graphs.

Self-contained: graph/SMILES handling, the graph-dependent discrete noise
model, a conditioned Transformer denoiser on a small autodiff engine, the
training/sampling loops, and the evaluation metric suite.
"""

__version__ = "0.1.0"
