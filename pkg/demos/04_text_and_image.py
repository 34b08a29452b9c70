"""Text tokens and image segments as features, scored by an external process.

``toy_model.py`` next to this file stands in for the real model.  It reads
JSON lines on stdin and answers with one score per perturbed instance.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from realexp import RunConfig, explain
from realexp.adapters import OverlayStyle, grid_segment, load_image, render_overlay
from realexp.blackbox import ModelEndpoint

HERE = Path(__file__).resolve().parent
model = ModelEndpoint.subprocess([sys.executable, str(HERE / "toy_model.py")])

# %% Text: each token is a feature; a masked token is dropped.
tokens = ["這部", "電影", "很", "有趣", "演員", "的", "表演", "令人", "印象", "深刻"]
rep = explain(RunConfig(model, {"modality": "text", "tokens": tokens}, K=300, n_trees=30, seed=2))
for i in rep.ranking[:4]:
    print(f"{tokens[i]}  phi={rep.attribution.phi[i]:.3f}")

# %% Image: a 3x3 grid of segments; masked segments are filled with the image mean.
with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    pixels = np.random.default_rng(0).integers(0, 255, (48, 48, 3), dtype=np.uint8)
    Image.fromarray(pixels, "RGB").save(tmp / "scene.ppm")
    cfg = RunConfig(model, {"modality": "image", "image": "scene.ppm", "segments": {"grid": [3, 3]}},
                    K=300, n_trees=30, seed=2, base_dir=str(tmp))
    rep = explain(cfg)
    print("\nsegment ranking:", rep.ranking)
    print("segment weights:", [0.1, 2.0, 0.4, 1.2, 0.05, 0.7, 0.3, 0.9, 0.2])

    instance = load_image(tmp / "scene.ppm", grid_segment(48, 48, 3, 3))
    out = render_overlay(instance, rep.attribution, OverlayStyle("topk", 3), tmp / "overlay.ppm")
    print("overlay written:", out.name, Image.open(out).size)
