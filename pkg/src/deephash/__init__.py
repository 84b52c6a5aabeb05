"""Learning-to-hash toolkit: triplet-trained MLP embeddings, sign codes and
exact Hamming retrieval with KNN/mAP evaluation."""

from .data import BlobSpec, Dataset, generate_blobs, read_codes, read_features, split, write_codes, write_features
from .exceptions import (
    BadMagicError,
    ConfigError,
    DeepHashError,
    DivergenceError,
    FormatError,
    ShapeMismatchError,
    TruncatedError,
)
from .hashing import HammingIndex, PackedCodes, binarize, build_index, hamming, pack, search, theta, unpack
from .pipeline import AlphaSchedule, LambdaSchedule, TrainConfig, TrainHistory, train, train_hash, train_triplet

__version__ = "0.1.0"
