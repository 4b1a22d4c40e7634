"""histomix: deterministic image-mixing synthesis and evaluation numerics for
histopathology segmentation pipelines.

Subsystems: geometry (Bezier loops and rasterization), synthesis (mosaic and
Bezier mixing plus augmentation), filtering (authenticity gate), losses,
metrics (IoU family and permutation test), tiling (sliding-window / TTA /
multiscale fusion), dataset_io (manifests and PNG payloads), pipeline (the
reproducible synth run), cli.
"""

__version__ = "0.1.0"
