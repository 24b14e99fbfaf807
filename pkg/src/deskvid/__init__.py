"""Desk-scale video generation machinery.

Modules: ``tensor`` (reverse-mode autodiff and AdamW), ``gradcheck``, ``flow``
(flow matching and Euler sampling), ``dcae`` (space-time autoencoder blocks and
token counts), ``mmdit`` (dual/single-stream transformer), ``condition`` and
``guidance`` (image conditioning and CFG), ``sched`` (buckets, batch-size search,
cost), ``datapipe`` and ``synth`` (curation), ``scaling`` (inference-time search),
``manifest``, ``plotting`` and ``cli``.
"""

__version__ = "0.1.0"
