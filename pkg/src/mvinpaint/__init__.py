"""Multi-view transformer inpainting for rendered novel views.

A self-contained research stack: a numpy-backed autodiff core, a synthetic
multi-camera scene rig with a software rasterizer, a cross-view transformer
with rotary position embeddings and top-k context sparsification, and a
streaming runtime with feature caching.
"""

__version__ = "0.1.0"
