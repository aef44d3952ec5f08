"""
Supervised fine-tuning examples from recorded trajectories.

The dialogue is the one the policy saw (render_dialogue over visible_steps), so
a transcript at training time matches the transcript at inference time. Masks
are per turn: only assistant turns are ever trainable.
"""
import logging

from dq_engine.exceptions import ConfigError, MalformedTrajectory, NonTerminalTrajectory
from dq_engine.models import (
    ExportMode, NodeStatus, Role, SFTExample, SFTTurn, TOOLSET_TOOLS, Toolset,
)
from dq_engine.serializers import SFTExampleSerializer, TrajectorySerializer, load
from dq_engine.services.policy_service import render_dialogue
from dq_engine.utils.jsonl import iter_jsonl, write_jsonl
from dq_engine.utils.trajectory import replay_caps, visible_steps

logger = logging.getLogger(__name__)


def infer_toolset(traj):
    """Toolset of the retriever calls in the trajectory, or None if it made none"""
    used = {step.call.tool for node in traj.nodes.values() for step in node.steps if step.call.is_retrieval}
    matches = [toolset for toolset in Toolset if used and used <= set(TOOLSET_TOOLS[toolset])]
    if used and not matches:
        raise MalformedTrajectory(f"trajectory mixes tools from several toolsets: {sorted(used)}")
    return matches[0] if matches else None


def _resolve_toolset(traj, toolset):
    if toolset is not None:
        return Toolset(toolset)
    if traj.toolset is not None:
        return Toolset(traj.toolset)
    inferred = infer_toolset(traj)
    if inferred is None:
        raise ConfigError("cannot infer the toolset of a trajectory without retriever calls; pass it explicitly")
    return inferred


def export_sft(traj, mode, toolset=None, caps=None, include_exhausted=False):
    """
    PerRound: one example per trainable assistant turn k holding turns 1..k,
    with only turn k trainable. SingleSequence: one example with every
    trainable assistant turn marked. Turns from rolled-back branches appear
    only with include_exhausted and are never trainable.
    """
    if not traj.terminal:
        raise NonTerminalTrajectory("only terminal trajectories can be exported")
    mode = ExportMode(mode)
    toolset = _resolve_toolset(traj, toolset)
    caps = replay_caps(traj, caps)

    steps = visible_steps(traj, caps=caps, include_exhausted=include_exhausted)
    dialogue = render_dialogue(traj.episode_question, toolset, caps, steps)
    trainable = [
        i for i, (role, _, exhausted) in enumerate(dialogue)
        if role == Role.ASSISTANT and not exhausted
    ]

    if mode == ExportMode.SINGLE_SEQUENCE:
        turns = tuple(
            SFTTurn(role=role, content=content, train_on=i in trainable)
            for i, (role, content, _) in enumerate(dialogue)
        )
        return [SFTExample(turns=turns)]

    examples = []
    for k in trainable:
        turns = tuple(
            SFTTurn(role=role, content=content, train_on=i == k)
            for i, (role, content, _) in enumerate(dialogue[:k + 1])
        )
        examples.append(SFTExample(turns=turns))
    return examples


def trainable_characters(examples):
    return sum(len(turn.content) for example in examples for turn in example.trainable_turns)


def read_trajectories(path):
    """Trajectory JSONL as written by the run command"""
    return [load(TrajectorySerializer, obj, line=line_number) for line_number, obj in iter_jsonl(path)]


def read_sft(path):
    return [load(SFTExampleSerializer, obj, line=line_number) for line_number, obj in iter_jsonl(path)]


def export_file(traj_path, out_path, mode, toolset=None, caps=None, include_exhausted=False):
    """Export every trajectory of a JSONL file; returns the number of examples written"""
    examples = []
    trajectories = read_trajectories(traj_path)
    for traj in trajectories:
        if traj.root.status != NodeStatus.FINISHED:
            logger.warning(f"Exporting aborted trajectory for {traj.episode_question!r}")
        examples.extend(export_sft(traj, mode, toolset=toolset, caps=caps, include_exhausted=include_exhausted))
    count = write_jsonl(out_path, (SFTExampleSerializer(example).data for example in examples))
    logger.info(f"Exported {count} {ExportMode(mode).value} examples from {len(trajectories)} trajectories")
    return count
