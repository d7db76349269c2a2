"""texdistill: PBR texture synthesis on fixed meshes via score distillation.

Subpackages:
    gradtape  reverse-mode autodiff over image-valued graphs
    assets    OBJ / Radiance HDR / EXR / PNG parsing and serialization
    render    software rasterizer and split-sum image-based PBR shading
    score     noise schedules, closed-form toy score models, remote client
    sds       SDS / SR-SDS gradients, parameterizations, two-stage pipeline
    analysis  toy reconstruction study, anchoring study, power spectra
    cli       command-line entry point
"""

__version__ = "0.1.0"
