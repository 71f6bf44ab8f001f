"""Action tokens, trajectory packing, annotation augmentation and evaluation
harnesses for vision-language-action agents in Minecraft-style games."""

from .action_codec import (
    BUTTONS,
    ActionEvent,
    ActionToken,
    CameraQuantizerConfig,
    TokenKind,
    decode_actions,
    encode_action,
    encode_actions,
    format_tokens,
    mu_law_decode,
    mu_law_encode,
    parse_token_string,
)
from .grounding import (
    AffineAugmentSpec,
    Annotation,
    PhotometricAugmentSpec,
    denormalize_annotation,
    denormalize_coord,
    emit_grounding,
    normalize_annotation,
    normalize_coord,
    parse_grounding,
    transform_annotation,
)
from .rollout import LatencyModel, TaskSpec, fit_latency_model, run_episode, run_task_suite, simulate_fps
from .token_vocab import ActionTokenVocab, BaseVocabStats, Strategy, build_vocab, load_vocab, serialize_vocab
from .trajectory import (
    IGNORE_INDEX,
    ChunkSchedule,
    Trajectory,
    TrajectoryFrame,
    TrainingSample,
    build_il_sample,
    build_sft_sample,
    chunk_actions,
    dataset_stats,
    load_trajectories,
    pack_dataset,
    unpack_dataset,
)

__version__ = "0.1.0"
FORMAT_VERSIONS = {"vocab": 1, "packed_dataset": 1, "report": 1}
