"""Transform coding for Gaussian-mixture sources with one global water level."""

from .codec import (
    Bitstream,
    CodecConfig,
    PrunedDictionary,
    decode_stream,
    decode_vector,
    encode_stream,
    encode_vector,
    prune_dictionary,
    wutc_encode_stream,
)
from .errors import (
    ConvergenceError,
    CorruptStreamError,
    DefinitenessError,
    DictionaryMismatchError,
    DomainError,
    InfeasibleBudgetError,
    IngestionError,
    InsufficientDataError,
    InvalidInputError,
    PrismQuantError,
)
from .gmm import EmConfig, LabeledSamples, MixtureDictionary, fit_em, map_label, responsibilities, sample
from .quantizer import ScalarQuantizer, design_ecsq

__version__ = "0.1.0"
