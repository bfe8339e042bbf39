"""Deep two-column radiomic sequencer for benign / malignant skin lesion images.

Submodules: ``kernels`` (layer math and gradients), ``sequencer`` (architecture,
forward/backward, sequence extraction), ``checkpoint``, ``data`` (manifests and
images), ``training``, ``metrics``, ``gradcheck`` and ``cli``.
"""

from .errors import DataError, DecodeError, DimensionError, ParseError, UndefinedMetricError, ValidationError
from .sequencer import (
    HeadSpec,
    SequencerModel,
    SequencerSpec,
    backward,
    build,
    extract_sequence,
    forward,
    paper_default_spec,
    reduced_spec,
)

__version__ = "0.1.0"
