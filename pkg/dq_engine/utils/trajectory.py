"""
Trajectory tree operations: growth, rollback, finish and the derived views
(visible dialogue, replay script, content digests).

Operations mutate the Trajectory in place and return it so calls can be chained.
Nodes are never deleted; rollback only changes statuses and the active pointer.
"""
import hashlib
import json
import logging
from dataclasses import replace

from dq_engine.exceptions import (
    AtRoot, EmptyAnswer, EmptyQuestion, InvalidStep, MalformedTrajectory, NodeClosed,
)
from dq_engine.models import (
    Action, ActionKind, Budget, NodeStatus, Observation, ObservationKind, Step, ToolCall,
    ToolName, Toolset, Trajectory, TrajectoryNode, VisibleStep,
)
from dq_engine.utils.text import one_line

logger = logging.getLogger(__name__)

ROOT_ID = 0
DECOMPOSE_MARKER = 'Decompose'

# Error notes the engine writes itself; these steps are never charged
REFUSED_NOTE = 'call already attempted in an abandoned branch'
BUDGET_EXHAUSTED_NOTE = 'retrieval budget exhausted'
UNCHARGED_NOTES = frozenset({REFUSED_NOTE, BUDGET_EXHAUSTED_NOTE})


def _require_open(traj):
    if traj.terminal:
        raise NodeClosed("trajectory is terminal")
    if traj.active.status != NodeStatus.OPEN:
        raise NodeClosed(f"active node {traj.active_id} is {traj.active.status}")


def new_trajectory(question, budget=None, toolset=None):
    question = (question or '').strip()
    if not question:
        raise EmptyQuestion("episode question is blank")
    root = TrajectoryNode(node_id=ROOT_ID, parent_id=None, question=question)
    return Trajectory(
        episode_question=question,
        nodes={ROOT_ID: root},
        active_id=ROOT_ID,
        budget_snapshots={ROOT_ID: budget or Budget()},
        toolset=Toolset(toolset) if toolset is not None else None,
    )


def append_step(traj, call, obs):
    if call.tool == ToolName.FINISH:
        raise InvalidStep("Finish steps are recorded through finish()")
    _require_open(traj)
    traj.active.steps.append(Step(call, obs))
    return traj


def spawn_child(traj, sub_question, budget=None):
    """Open a sub-question under the active node and make it active"""
    _require_open(traj)
    sub_question = (sub_question or '').strip()
    if not sub_question:
        raise EmptyQuestion("sub-question is blank")

    parent = traj.active
    child = TrajectoryNode(
        node_id=max(traj.nodes) + 1,
        parent_id=parent.node_id,
        question=sub_question,
        spawn_index=len(parent.steps),
    )
    traj.nodes[child.node_id] = child
    traj.budget_snapshots[child.node_id] = budget or Budget()
    traj.active_id = child.node_id
    logger.debug(f"Spawned node {child.node_id} under {parent.node_id}: {sub_question}")
    return traj


def _subtree_calls(traj, node):
    calls = {(step.call.tool.value, step.call.argument) for step in node.steps if step.call.is_retrieval}
    calls.add((DECOMPOSE_MARKER, node.question))
    calls |= node.attempted
    for child in traj.children_of(node.node_id):
        calls |= _subtree_calls(traj, child)
    return calls


def rollback(traj):
    """Abandon the active node and return to its parent. Budget is not refunded."""
    _require_open(traj)
    node = traj.active
    if node.is_root:
        raise AtRoot("cannot roll back past the root")

    node.status = NodeStatus.EXHAUSTED
    parent = traj.nodes[node.parent_id]
    parent.attempted |= _subtree_calls(traj, node)
    traj.active_id = parent.node_id
    logger.debug(f"Rolled back node {node.node_id} to {parent.node_id}")
    return traj


def finish(traj, answer, budget_exhausted=False):
    """
    Record a Finish on the active node.

    At the root this ends the episode with a final answer. At a child node it
    completes the sub-question and returns control to the parent, which sees the
    sub-answer in its dialogue. An empty answer is only accepted on the
    budget-exhaustion abort path.
    """
    _require_open(traj)
    answer = one_line(answer)
    if not answer and not budget_exhausted:
        raise EmptyAnswer("empty Finish is reserved for budget exhaustion")

    node = traj.active
    node.steps.append(Step(ToolCall(ToolName.FINISH, answer), Observation.answer_of(answer)))
    node.status = NodeStatus.FINISHED

    if node.is_root:
        traj.final_answer = answer or None
        traj.terminal = True
    else:
        traj.active_id = node.parent_id
    return traj


def unwind_to_root(traj):
    """Roll back every open node between the active node and the root"""
    while not traj.active.is_root:
        rollback(traj)
    return traj


def abort(traj):
    """End the episode without a final answer"""
    traj.final_answer = None
    traj.terminal = True
    return traj


def attempted_calls(traj):
    """(tool, argument) pairs the active node must not repeat"""
    node = traj.active
    blocked = set(node.attempted)
    if node.parent_id is not None:
        blocked |= traj.nodes[node.parent_id].attempted
    return blocked


def rebuild_attempted(traj):
    """Recompute attempted sets (they are not persisted) from Exhausted children"""
    for node in traj.nodes.values():
        node.attempted = set()
    for node in sorted(traj.nodes.values(), key=lambda n: -traj.depth(n.node_id)):
        if node.status == NodeStatus.EXHAUSTED and node.parent_id is not None:
            traj.nodes[node.parent_id].attempted |= _subtree_calls(traj, node)
    return traj


# Budget accounting

def is_charged(step):
    if not step.call.is_retrieval:
        return False
    obs = step.observation
    return not (obs.kind == ObservationKind.ERROR and obs.error_note in UNCHARGED_NOTES)


def _timeline(traj, node=None):
    """
    Every event in chronological (depth-first) order as (node, kind, payload):
    ('step', Step), ('spawn', child) and ('close', child).
    """
    node = node or traj.root
    children = traj.children_of(node.node_id)
    for index in range(len(node.steps) + 1):
        for child in children:
            if child.spawn_index == index:
                yield node, 'spawn', child
                yield from _timeline(traj, child)
                yield node, 'close', child
        if index < len(node.steps):
            yield node, 'step', node.steps[index]


def replay_caps(traj, caps=None):
    """Caps recorded with the trajectory; `caps` only fills in when none were recorded"""
    return traj.caps or (caps or Budget()).fresh()


def _usage(traj):
    """(calls, entries) charged so far, counted without checking any cap"""
    calls = entries = 0
    for _, kind, payload in _timeline(traj):
        if kind == 'step' and is_charged(payload):
            calls += 1
            entries += payload.observation.entry_count
    return calls, entries


def recount_budget(traj, caps=None):
    """Budget consumed by a recorded trajectory, abandoned branches included"""
    caps = replay_caps(traj, caps)
    calls, entries = _usage(traj)
    if calls > caps.max_retriever_calls or entries > caps.max_entries:
        raise MalformedTrajectory(
            f"recorded usage of {calls} calls and {entries} entries exceeds the caps "
            f"of {caps.max_retriever_calls} calls and {caps.max_entries} entries"
        )
    return replace(caps, calls_used=calls, entries_returned=entries)


# Derived views

def _hidden(traj, node, include_exhausted):
    if include_exhausted:
        return False
    return any(n.status == NodeStatus.EXHAUSTED for n in traj.path_to(node.node_id))


def _in_exhausted_branch(traj, node):
    return any(n.status == NodeStatus.EXHAUSTED for n in traj.path_to(node.node_id))


def _explicit_rollback(traj, child, unwinding):
    """True when the policy asked for this rollback (not an Empty result or an unwind)"""
    if unwinding or child.status != NodeStatus.EXHAUSTED:
        return False
    if not child.steps:
        return True
    if any(grandchild.spawn_index == len(child.steps) for grandchild in traj.children_of(child.node_id)):
        return True
    return child.steps[-1].observation.kind != ObservationKind.EMPTY


def visible_steps(traj, caps=None, include_exhausted=False):
    """
    The dialogue as the policy sees it: root-to-active path with finished
    sub-questions lifted into their parents. Steps of Exhausted nodes are left
    out unless include_exhausted is set, in which case they are tagged.
    """
    caps = replay_caps(traj, caps)
    calls = entries = 0
    visible = []
    unwinding = False

    def emit(node_id, action, obs=None, lifted_question=None, exhausted=False):
        visible.append(VisibleStep(
            node_id=node_id, action=action, observation=obs,
            calls_left=max(caps.max_retriever_calls - calls, 0),
            entries_left=max(caps.max_entries - entries, 0),
            lifted_question=lifted_question, exhausted=exhausted,
        ))

    for node, kind, payload in _timeline(traj):
        if kind == 'step':
            if is_charged(payload):
                calls += 1
                entries += payload.observation.entry_count
            if payload.observation.error_note == BUDGET_EXHAUSTED_NOTE:
                unwinding = True
            if _hidden(traj, node, include_exhausted):
                continue
            lifted = node.question if (payload.call.tool == ToolName.FINISH and not node.is_root) else None
            emit(node.node_id, Action(kind=ActionKind.INVOKE, call=payload.call), payload.observation,
                 lifted_question=lifted, exhausted=_in_exhausted_branch(traj, node))
        elif kind == 'spawn':
            if _hidden(traj, payload, include_exhausted):
                continue
            emit(node.node_id, Action.decompose(payload.question),
                 exhausted=_in_exhausted_branch(traj, payload))
        elif kind == 'close':
            if include_exhausted and _explicit_rollback(traj, payload, unwinding):
                emit(payload.node_id, Action.rollback(), exhausted=True)
    return visible


def replay_actions(traj):
    """Action script that reproduces the recorded trajectory when run again"""
    actions = []
    unwinding = False
    for node, kind, payload in _timeline(traj):
        if kind == 'step':
            actions.append(Action(kind=ActionKind.INVOKE, call=payload.call))
            if payload.observation.error_note == BUDGET_EXHAUSTED_NOTE:
                unwinding = True
        elif kind == 'spawn':
            actions.append(Action.decompose(payload.question))
        elif kind == 'close' and _explicit_rollback(traj, payload, unwinding):
            actions.append(Action.rollback())
    return actions


def _step_record(step):
    obs = step.observation
    return [
        step.call.tool.value, step.call.argument, obs.kind.value,
        [list(entry) for entry in obs.entries] if obs.entries is not None else None,
        obs.answer, obs.error_note,
    ]


def _digest(payload):
    encoded = json.dumps(payload, ensure_ascii=False, separators=(',', ':')).encode('utf-8')
    return hashlib.sha256(encoded).hexdigest()


def steps_digest(steps):
    """Content hash of a step list"""
    return _digest([_step_record(step) for step in steps])


def trajectory_digest(traj):
    """Content hash of the whole tree (statuses, links, steps, final answer)"""
    return _digest({
        'question': traj.episode_question,
        'final_answer': traj.final_answer,
        'nodes': [
            [node.node_id, node.parent_id, node.question, NodeStatus(node.status).value,
             node.spawn_index, [_step_record(step) for step in node.steps]]
            for node in traj.node_list
        ],
    })


def check_well_formed(traj):
    """Raise MalformedTrajectory when the tree breaks a structural invariant"""
    roots = [node for node in traj.nodes.values() if node.parent_id is None]
    if len(roots) != 1:
        raise MalformedTrajectory(f"expected exactly one root, found {len(roots)}")

    for node_id, node in traj.nodes.items():
        if node.node_id != node_id:
            raise MalformedTrajectory(f"node key {node_id} does not match id {node.node_id}")
        if node.parent_id is not None and node.parent_id not in traj.nodes:
            raise MalformedTrajectory(f"node {node_id} references missing parent {node.parent_id}")
        try:
            traj.path_to(node_id)
        except ValueError as e:
            raise MalformedTrajectory(str(e))
        if node.status == NodeStatus.FINISHED:
            if not node.steps or node.steps[-1].call.tool != ToolName.FINISH:
                raise MalformedTrajectory(f"finished node {node_id} does not end with Finish")
        if node.parent_id is not None:
            parent = traj.nodes[node.parent_id]
            if node.spawn_index is None or not 0 <= node.spawn_index <= len(parent.steps):
                raise MalformedTrajectory(f"node {node_id} has an invalid spawn index")

    if traj.active_id not in traj.nodes:
        raise MalformedTrajectory(f"active node {traj.active_id} does not exist")
    if not traj.terminal and traj.active.status != NodeStatus.OPEN:
        raise MalformedTrajectory("active node of a live trajectory must be open")
    return traj
