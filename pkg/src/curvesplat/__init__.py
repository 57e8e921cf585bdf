"""Dynamic street scenes as Gaussian primitives whose motion follows
learnable Bezier trajectories.

Modules: ``bezier`` and ``fitting`` (curves), ``scene`` (the model),
``raster`` (tiled splatting and its adjoint), ``losses``, ``optim``
(Adam, training, gradient checks), ``synthetic``/``dataset``/``evaluate``
(data and metrics) and ``cli``.
"""

__version__ = "0.1.0"
