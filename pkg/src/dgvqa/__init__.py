"""Adversarial distractor generation for multiple-choice visual QA.

A policy network picks answers from a closed candidate pool so as to fool a
frozen triplet-scoring discriminator; the generated distractors then serve
to measure (``delta_acc``) and repair (augmentation) the discriminator.
"""

__version__ = "0.1.0"

from .agent import AgentGenerator, PolicyAgent, SemEquivModel, is_sem_equiv, policy_forward, sample_actions, top_k_distractors
from .baselines import (
    MatchingGenerator,
    MatchingScorer,
    PriorGenerator,
    adversarial_matching,
    build_qtype_prior,
    train_failure_baseline,
)
from .dataset import (
    CandidatePool,
    Dataset,
    EmbeddingTable,
    McqItem,
    SyntheticSpec,
    build_candidate_pool,
    embed_question,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .environment import AccuracyReport, Discriminator, EnvConfig, evaluate_mcq, score_triplet, train_discriminator
from .harness import (
    AttackReport,
    AugmentationReport,
    OriginalGenerator,
    augment_dataset,
    delta_acc,
    run_attack,
    run_augmentation_experiment,
)
from .kernel import Rng
from .reinforce import RewardSpec, TrainConfig, compute_reward, pretrain_agent, reinforce_step, train_mlpr
