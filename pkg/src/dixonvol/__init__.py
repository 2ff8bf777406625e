"""Population-scale testis volumetry from multi-channel DIXON MRI.

Library layout mirrors the pipeline stages: ``nifti`` (file I/O and the
volume/mask types), ``cohort`` (catalog, exclusions, splits), ``preprocess``
(normalization, slicing), ``inference`` (graph execution, restacking,
binarization), ``postprocess`` (margin rule), ``metrics`` (dice, volumes,
agreement), ``popstats`` (population summaries), ``phantom`` (synthetic
oracle cohorts), and ``pipeline``/``cli`` (batch orchestration). The
``kernels`` subpackage holds the compiled per-voxel core with its NumPy
fallback.
"""

__version__ = "0.1.0"
