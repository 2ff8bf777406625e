"""Training side of the DIXON testis volumetry project.

Fits the 2-D/3-D segmentation model family on annotated cohorts (real or
phantom), runs the 5-fold cross-validation protocol, and exports portable
graphs plus metadata sidecars that the volumetry pipeline consumes.
"""

__version__ = "0.1.0"
