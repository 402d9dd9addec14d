"""addrforge: dataset forge and evaluation toolkit for cross-view address
localization VQA.

Subpackages cover the full non-training pipeline: city metadata ingestion,
satellite window tiling and street annotation, street-view/satellite image
grafting, multi-turn VQA conversation synthesis, alignment label generation
against a chat endpoint, the address-localization metric suite, and the
street frequency analysis.
"""

__version__ = "0.1.0"
