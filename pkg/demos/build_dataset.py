"""
From trajectories to packed training samples
============================================

Bind the action tokens to vocabulary ids, cut a trajectory into chunks and
build label-masked samples, then write them as a packed JSONL file.
"""

import random
import tempfile
from pathlib import Path

from craftvla import (
    ActionEvent,
    BaseVocabStats,
    Trajectory,
    TrajectoryFrame,
    build_il_sample,
    build_sft_sample,
    build_vocab,
    chunk_actions,
    dataset_stats,
    pack_dataset,
    unpack_dataset,
)
from craftvla.trajectory import IGNORE_INDEX, utf8_byte_ids

# A toy base vocabulary with word frequencies. "repurpose" overwrites the
# rarest ids instead of growing the embedding table.
rng = random.Random(0)
entries = tuple((i, f"w{i}", rng.randint(0, 10_000)) for i in range(500))
vocab = build_vocab(BaseVocabStats(entries, 500), "repurpose")
print(len(vocab.bindings), "action tokens bound; first few:")
for b in vocab.bindings[:4]:
    print(f"  {b.surface:20s} -> id {b.id} (was {b.replaced_surface})")

# A short trajectory: walk forward, then turn and attack.
events = [ActionEvent({"forward"}), ActionEvent({"forward"}, (2.0, 0.0)), ActionEvent({"attack"}, (0.0, -1.0))] * 3
traj = Trajectory("chop the tree", tuple(TrajectoryFrame(f"ep0/{i:03d}.jpg", e, i) for i, e in enumerate(events)))

# Chunks of three consecutive actions; the last partial chunk is dropped.
chunks = chunk_actions(traj, 3)
print("chunk starts:", [c.start for c in chunks])

# Only the action tokens are supervised; the prompt is masked out.
instruction = utf8_byte_ids(traj.instruction)
sample = build_il_sample(traj, chunks[1], vocab, instruction)
masked = sum(lab == IGNORE_INDEX for lab in sample.label_ids)
print(f"IL sample: {len(sample.input_ids)} tokens, {masked} masked, {sample.supervised_count} supervised")

# Question-answer samples work the same way, with image placeholders up front.
qa = build_sft_sample(utf8_byte_ids("what breaks dirt fastest?"), 4, utf8_byte_ids("a shovel"))
print(f"SFT sample: {qa.supervised_count} supervised tokens")

# Packing is canonical, so the hash is stable across runs and worker counts.
out = Path(tempfile.mkdtemp()) / "train.jsonl"
samples = [build_il_sample(traj, c, vocab, instruction) for c in chunks] + [qa]
digest = pack_dataset(samples, out, vocab.total_vocab_size)
print("sha256:", digest[:16], "...")
assert unpack_dataset(out) == samples
print(dataset_stats(samples).to_dict())
