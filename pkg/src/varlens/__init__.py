"""varlens: recognize variables from their data.

Learns fixed-size embeddings of univariate datasets (table columns) so that
datasets of the same underlying variable land close together, then builds
variable search, schema matching, and table union search on top. Classical
two-sample baselines are included for comparison.
"""

from .apps import (SchemaMatchResult, UnionCandidate, column_similarity_matrix,
                   schema_match, union_search)
from .core import (ColumnDataset, DatasetEmbedding, MatchScore, PartitionRole,
                   ValueSpace, subsample)
from .encode import (CharVocabulary, WordVectorTable, embed_text_field,
                     encode_chars, float_to_bits, load_word_vectors,
                     vocabulary_coverage)
from .errors import (ConfigError, FormatError, InvalidArgument, NotComparable,
                     PairShortage, SamplingError, TrainingDiverged,
                     UnsupportedVersion, VarlensError)
from .evaluate import (BaselineScorer, CalibratedRecall, EmbeddingScorer,
                       EvalPoint, Scorer, SyntheticCorpus,
                       SyntheticCorpusConfig, auc, calibrated_recall,
                       eval_pairs, generate_synthetic_corpus, make_scorer,
                       matches_at_k, rank_adjustments, write_corpus)
from .index import (RepositoryIndex, augment_query, augment_repository)
from .ingest import (GroundTruth, PartitionedCorpus, build_ground_truth,
                     detect_value_space, ground_truth_match, jaro_winkler,
                     load_corpus, load_table, partition_corpus, tokenize_name)
from .simmodel import (EmbeddingModel, embed_dataset, load_model, new_model,
                       pair_loss, pairwise_distance, save_model)
from .train import (TrainConfig, TrainingLog, augment_split,
                    recalibrate_probability, sample_triplet, train_model)

__version__ = "0.1.0"

__all__ = [
    "ColumnDataset", "DatasetEmbedding", "MatchScore", "PartitionRole",
    "ValueSpace", "subsample",
    "VarlensError", "InvalidArgument", "FormatError", "UnsupportedVersion",
    "ConfigError", "SamplingError", "PairShortage", "NotComparable",
    "TrainingDiverged",
    "float_to_bits", "WordVectorTable", "load_word_vectors", "embed_text_field",
    "vocabulary_coverage", "CharVocabulary", "encode_chars",
    "EmbeddingModel", "new_model", "embed_dataset", "pairwise_distance",
    "pair_loss", "save_model", "load_model",
    "TrainConfig", "TrainingLog", "train_model", "augment_split",
    "sample_triplet", "recalibrate_probability",
    "GroundTruth", "PartitionedCorpus", "build_ground_truth", "detect_value_space",
    "ground_truth_match", "jaro_winkler", "load_corpus", "load_table",
    "partition_corpus", "tokenize_name",
    "RepositoryIndex", "augment_repository", "augment_query",
    "Scorer", "EmbeddingScorer", "BaselineScorer", "make_scorer", "auc",
    "EvalPoint", "eval_pairs", "matches_at_k", "CalibratedRecall",
    "calibrated_recall", "rank_adjustments", "SyntheticCorpusConfig",
    "SyntheticCorpus", "generate_synthetic_corpus", "write_corpus",
    "column_similarity_matrix", "SchemaMatchResult", "schema_match",
    "UnionCandidate", "union_search",
    "__version__",
]
