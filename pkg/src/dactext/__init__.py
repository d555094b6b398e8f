"""Abstaining multi-task CNN text classifiers with explanation and association tooling."""
from . import kernels
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Corpus, LabeledDocument, SplitSpec, SyntheticSpec, Vocabulary, generate_corpus, load_jsonl, split
from .explain import Explanation, PerturbationConfig, explain, explain_fn, stability
from .loss import AbstentionConfig, abstain_loss, abstain_loss_and_grad, alpha_controller_step
from .metrics import abstention_audit, combo_metrics, evaluate, naive_guess, predict_records, selective_metrics
from .model import ABSTAIN, MTCNN, ModelConfig, TaskSpec, model_init
from .stats import (association_from_counts, attribution_estimate, fisher_exact_2x2, fisher_exact_2x3)
from .train import TrainConfig, budget_sweep, train

__version__ = "0.1.0"
