"""Semantic-matching knowledge-graph embeddings with duality-induced
regularization: models, penalties, training, filtered evaluation, sparsity
tooling, and numerical verification of the nuclear-norm structure."""

from .data import (Dataset, FilterIndex, FrequencyTable, RelationType,
                   RelationTypeMap, add_reciprocals, build_filter_index,
                   build_frequency_table, classify_relations, entity_weight,
                   entity_weights, load_dataset)
from .models import (ModelKind, ModelParams, backward, forward_queries,
                     init_params, score, score_all_candidates)
from .regularizers import (RegKind, RegSpec, SmootherKind, penalty_batch,
                           static_penalty, temporal_penalty,
                           timestamp_smoother)
from .training import (AdagradState, TrainConfig, TrainResult, adagrad_step,
                       fit, weighted_cross_entropy)
from .evaluation import (RankingReport, SparsityReport, evaluate_split,
                         filtered_rank, lambda_sparsity, read_csr,
                         threshold_and_export, write_csr)
from .checkpoint import load_checkpoint, save_checkpoint
from .theory import (BalanceReport, FactorQuad, FactorTriple, balanced_rescale,
                     global_dura_sum, rank1_nuclear_oracle, run_verification,
                     verify_static_balance, verify_temporal_balance)

__version__ = "0.1.0"
