"""Smart-home behavior sequences: importance-based compression with a GRU
autoencoder, and LLM-driven synthesis for changed scenes."""
from .autoencoder import AutoencoderConfig, TrainedModel, reconstruction_losses, train
from .core import (
    Behavior,
    BehaviorDataset,
    BehaviorSequence,
    DeviceDictionary,
    Timestamp,
    Vocabulary,
    build_vocabulary,
    decode_sequence,
    default_dictionary,
    encode_sequence,
    parse_text,
    render_text,
)
from .ingest import FixtureSpec, estimate_tokens, load_dataset, save_dataset, simulate_fixture
from .sppc import ImportanceReport, compress, score_exact_loo, score_kfold, score_similarity

__version__ = "0.1.0"

__all__ = [
    "AutoencoderConfig", "Behavior", "BehaviorDataset", "BehaviorSequence", "DeviceDictionary", "FixtureSpec",
    "ImportanceReport", "Timestamp", "TrainedModel", "Vocabulary", "build_vocabulary", "compress",
    "decode_sequence", "default_dictionary", "encode_sequence", "estimate_tokens", "load_dataset",
    "parse_text", "reconstruction_losses", "render_text", "save_dataset", "score_exact_loo", "score_kfold",
    "score_similarity", "simulate_fixture", "train",
]
