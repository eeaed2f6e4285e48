__version__ = "0.1.0"

from .constants import *
from .diagnostics import *
from .mappings import *
from .core import (InteractionLog, IdMap, EmbeddingTable, SeenSets, Ranking, Rankings, build_id_maps,
                   build_seen_sets, remap_events, unmap_events, top_k_unseen)
from .ingest import (load_interactions, load_onion_history, load_embeddings, write_embeddings,
                     ChunkEmbeddingSet, pool_chunks, pool_chunk_archive)
from .config import SplitConfig, TrainConfig, SeqTrainConfig, RunConfig, load_config
from .split import DatasetSplit, temporal_split, prior_events, sanitize_and_partition, split_report, save_split
from .knn import build_user_profiles, recommend_knn
from .shallow import ShallowParams, init_shallow, train_shallow, recommend_shallow, hinge_loss
from .seqrec import (SequenceDataset, SeqParams, build_sequences, apply_masking, init_seqrec, forward_logits,
                     train_seqrec, recommend_seqrec)
from .evaluation import MetricReport, metrics_at_k, aggregate, evaluate_rankings, bootstrap_significance
from .dataAccessLayer import DataAccessLayer
from .records import *
