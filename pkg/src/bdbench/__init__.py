"""bdbench: trigger-based dataset poisoning attacks, defenses, and metrics
for text classifiers, runnable deterministically at desk scale."""

from .attack import (PoisonSpec, PoisonedDataset, TriggerSpec, addsent_trigger,
                     badnet_trigger, insert_addsent, insert_badnet, poison,
                     poison_test_set, select_poison_indices)
from .cluster import (ClusterAssignment, HdbscanConfig, Reducer, ReducerConfig,
                      core_distances, hdbscan, mutual_reachability_mst,
                      pca_fit_transform)
from .corpus import (Dataset, SyntheticSpec, TextSample, generate_synthetic,
                     load_dataset, write_dataset)
from .defense import (DetectionVerdict, FilterResult, bki_filter,
                      calibrate_threshold, cube_filter, onion_correct,
                      onion_suspicion, strip_detect, strip_scores)
from .kernels import BACKEND as KERNEL_BACKEND
from .metrics import (EvalReport, SimilarityScorer, asr, asr_margin,
                      asr_under_detection, cacc, cacc_under_detection,
                      delta_ge, delta_ppl, far_frr, similarity)
from .text import (Featurizer, FeatureVector, NGramLM, Tokenizer, Vocabulary,
                   detokenize, lm_fit, perplexity, tokenize)
from .victim import VictimConfig, VictimModel, gradient_check, train

__version__ = "0.1.0"
