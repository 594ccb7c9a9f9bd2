"""Weakly supervised turn-level spoken language understanding for voice
ordering: an order-world executor, a lexicon tagger, a pointer-style
program scorer trained from denotations, randomized memory-augmented beam
search, a bandit curriculum, a rule-based baseline, and a synthetic data
generator."""

from .orders import (
    Action,
    ActionKind,
    Denotation,
    OrderItem,
    Program,
    PropertyType,
    RewardValue,
    TagToken,
    denotation_distance,
    execute,
    reward,
    rescale_rewards,
)
from .grammar import check_prefix, valid_continuations
from .lexicon import Lexicon, default_lexicon, init_tag_embeddings, tag_utterances
from .model import ModelDims, ModelParams, decode_step, gradients, init_params, program_logprob
from .search import BeamConfig, ExploredSet, ProgramCache, beam_search, rbsma_search
from .curriculum import BanditState, SrgNormalizer, policy_probs, srg, update_weights
from .dataio import Example, read_dataset, write_dataset
from .training import TrainConfig, evaluate, run_training
from .baseline import pipeline_parse, remove_disfluency

__version__ = "0.1.0"
