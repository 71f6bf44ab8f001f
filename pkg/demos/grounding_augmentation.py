"""
Grounding answers and augmentation that keeps boxes honest
==========================================================

Boxes and points live in a [0, 1000) grid independent of image size. When
an image is flipped, rotated or sheared, the annotations must follow.
"""

import numpy as np

from craftvla import (
    AffineAugmentSpec,
    Annotation,
    denormalize_annotation,
    emit_grounding,
    normalize_annotation,
    parse_grounding,
    transform_annotation,
)
from craftvla.errors import DegenerateAnnotation
from craftvla.grounding import sample_augmentation

# Parse a model answer naming one object with a box.
answer = "<|object_ref_start|>torch<|object_ref_end|><|bbox_start|>(453,333),(563,528)<|bbox_end|>"
(torch,) = parse_grounding(answer)
print(torch.name, torch.points)

# Map it onto a 640x360 frame; each cell maps to its pixel center.
size = (640, 360)
pixels = denormalize_annotation(torch, size)
print("pixels:", np.round(pixels.points, 2))

# Mirror the frame: the box flips to the other side.
flipped = transform_annotation(pixels, AffineAugmentSpec(hflip=True))
print("flipped:", np.round(flipped.points, 2))

# A rotated box becomes the axis-aligned hull of its four rotated corners.
rotated = transform_annotation(pixels, AffineAugmentSpec(rotate=20, scale=1.1))
print("rotated:", emit_grounding([normalize_annotation(rotated)]))

# Random draws per training phase. The action phase only shifts the frame.
rng = np.random.default_rng(3)
for phase in ("vision_language", "action"):
    photo, affine = sample_augmentation(rng, phase, size)
    print(phase, affine)

# Pushing everything off-screen raises, so the caller can drop the sample.
try:
    transform_annotation(pixels, AffineAugmentSpec(translate=(0, 1000)))
except DegenerateAnnotation as exc:
    print("dropped:", exc)

# Point answers keep every point; emission orders them top-to-bottom.
pts = Annotation.point("iron boots", (386, 494), (356, 446))
print(emit_grounding([pts]))
