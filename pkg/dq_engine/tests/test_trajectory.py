"""
Tests for the trajectory tree: growth, rollback, finish and derived views
"""
import random

import pytest

from dq_engine.exceptions import (
    AtRoot, EmptyAnswer, EmptyQuestion, InvalidStep, MalformedTrajectory, NodeClosed,
)
from dq_engine.models import (
    ActionKind, Budget, Entry, NodeStatus, Observation, ToolCall, ToolName, TrajectoryNode,
)
from dq_engine.utils.trajectory import (
    BUDGET_EXHAUSTED_NOTE, REFUSED_NOTE, abort, append_step, attempted_calls, check_well_formed,
    finish, new_trajectory, recount_budget, rebuild_attempted, rollback, spawn_child,
    steps_digest, trajectory_digest, unwind_to_root, visible_steps,
)


def search(query):
    return ToolCall(ToolName.ARTICLE_RETRIEVER, query)


def hits(*titles):
    return Observation.from_entries(Entry(title, f"About {title}.") for title in titles)


def test_new_trajectory_rejects_blank_question():
    with pytest.raises(EmptyQuestion):
        new_trajectory("   ")


def test_new_trajectory_has_open_root():
    traj = new_trajectory("  Who directed the sequel?  ")
    assert traj.episode_question == "Who directed the sequel?"
    assert traj.root.status == NodeStatus.OPEN
    assert traj.active_id == traj.root.node_id
    assert not traj.terminal


def test_append_step_goes_to_active_node():
    traj = new_trajectory("q")
    append_step(traj, search("a"), hits("A"))
    spawn_child(traj, "sub")
    append_step(traj, search("b"), hits("B"))

    assert [step.call.argument for step in traj.root.steps] == ["a"]
    assert [step.call.argument for step in traj.active.steps] == ["b"]


def test_append_step_rejects_finish():
    traj = new_trajectory("q")
    with pytest.raises(InvalidStep):
        append_step(traj, ToolCall(ToolName.FINISH, "x"), Observation.answer_of("x"))


def test_spawn_child_records_position_and_parent():
    traj = new_trajectory("q")
    append_step(traj, search("a"), hits("A"))
    spawn_child(traj, "who made it?")

    child = traj.active
    assert child.parent_id == traj.root.node_id
    assert child.spawn_index == 1
    assert child.question == "who made it?"
    assert traj.depth(child.node_id) == 2


def test_spawn_child_rejects_blank_sub_question():
    traj = new_trajectory("q")
    with pytest.raises(EmptyQuestion):
        spawn_child(traj, " ")


def test_rollback_at_root_raises():
    traj = new_trajectory("q")
    with pytest.raises(AtRoot):
        rollback(traj)


def test_rollback_restores_parent_and_blocks_repeats():
    traj = new_trajectory("q")
    append_step(traj, search("a"), hits("A"))
    before = steps_digest(traj.root.steps)

    spawn_child(traj, "sub")
    append_step(traj, search("b"), Observation.empty())
    child_id = traj.active_id
    rollback(traj)

    assert traj.active_id == traj.root.node_id
    assert traj.nodes[child_id].status == NodeStatus.EXHAUSTED
    assert steps_digest(traj.root.steps) == before
    assert (ToolName.ARTICLE_RETRIEVER.value, "b") in attempted_calls(traj)
    assert ("Decompose", "sub") in attempted_calls(traj)


def test_rollback_keeps_nodes():
    traj = new_trajectory("q")
    spawn_child(traj, "sub")
    rollback(traj)
    assert len(traj.nodes) == 2


def test_finish_at_root_ends_episode():
    traj = new_trajectory("q")
    finish(traj, "  Velma\nOkonkwo ")

    assert traj.terminal
    assert traj.final_answer == "Velma Okonkwo"
    assert traj.root.status == NodeStatus.FINISHED
    assert traj.root.steps[-1].call.tool == ToolName.FINISH


def test_finish_requires_answer_unless_budget_exhausted():
    traj = new_trajectory("q")
    with pytest.raises(EmptyAnswer):
        finish(traj, "")

    finish(traj, "", budget_exhausted=True)
    assert traj.terminal
    assert traj.final_answer is None


def test_finish_at_child_lifts_answer_to_parent():
    traj = new_trajectory("q")
    spawn_child(traj, "who helmed it?")
    child_id = traj.active_id
    finish(traj, "Velma Okonkwo")

    assert traj.active_id == traj.root.node_id
    assert traj.nodes[child_id].status == NodeStatus.FINISHED
    assert not traj.terminal

    lifted = [step for step in visible_steps(traj) if step.lifted_question]
    assert len(lifted) == 1
    assert lifted[0].lifted_question == "who helmed it?"
    assert lifted[0].action.call.argument == "Velma Okonkwo"


def test_closed_trajectory_rejects_growth():
    traj = new_trajectory("q")
    finish(traj, "done")
    with pytest.raises(NodeClosed):
        append_step(traj, search("a"), hits("A"))
    with pytest.raises(NodeClosed):
        spawn_child(traj, "sub")


def test_unwind_to_root_exhausts_open_chain():
    traj = new_trajectory("q")
    spawn_child(traj, "s1")
    spawn_child(traj, "s2")
    unwind_to_root(traj)

    assert traj.active_id == traj.root.node_id
    assert all(node.status == NodeStatus.EXHAUSTED for node in traj.nodes.values() if not node.is_root)


def test_abort_is_terminal_without_answer():
    traj = new_trajectory("q")
    abort(traj)
    assert traj.terminal
    assert traj.final_answer is None


def test_visible_steps_hide_exhausted_branch():
    traj = new_trajectory("q")
    append_step(traj, search("a"), hits("A"))
    spawn_child(traj, "dead end")
    append_step(traj, search("b"), Observation.empty())
    rollback(traj)
    spawn_child(traj, "second try")
    append_step(traj, search("c"), hits("C"))

    arguments = [step.action.call.argument for step in visible_steps(traj) if step.action.kind == ActionKind.INVOKE]
    decomposed = [step.action.sub_question for step in visible_steps(traj) if step.action.kind == ActionKind.DECOMPOSE]
    assert arguments == ["a", "c"]
    assert decomposed == ["second try"]


def test_visible_steps_track_remaining_budget():
    traj = new_trajectory("q", Budget(max_retriever_calls=4, max_entries_per_call=5))
    append_step(traj, search("a"), hits("A", "B"))
    append_step(traj, search("b"), hits("C"))

    steps = visible_steps(traj)
    assert [(step.calls_left, step.entries_left) for step in steps] == [(3, 18), (2, 17)]


def test_visible_steps_past_the_caps_bottom_out_at_zero():
    traj = new_trajectory("q")
    for i in range(11):
        append_step(traj, search(f"q{i}"), hits("A"))

    steps = visible_steps(traj)
    assert len(steps) == 11
    assert (steps[-1].calls_left, steps[-1].entries_left) == (0, 39)

    with pytest.raises(MalformedTrajectory):
        recount_budget(traj)

    traj.budget_snapshots.clear()
    assert recount_budget(traj, caps=Budget(max_retriever_calls=20)).calls_used == 11


def test_visible_steps_include_exhausted_marks_rollback():
    traj = new_trajectory("q")
    spawn_child(traj, "dead end")
    append_step(traj, search("b"), hits("B"))
    rollback(traj)
    finish(traj, "answer")

    steps = visible_steps(traj, include_exhausted=True)
    kinds = [(step.action.kind, step.exhausted) for step in steps]
    assert kinds == [
        (ActionKind.DECOMPOSE, True),
        (ActionKind.INVOKE, True),
        (ActionKind.ROLLBACK, True),
        (ActionKind.INVOKE, False),
    ]


def test_recount_budget_skips_engine_notes():
    traj = new_trajectory("q")
    append_step(traj, search("a"), hits("A", "B"))
    append_step(traj, search("a"), Observation.error(REFUSED_NOTE))
    append_step(traj, search("b"), Observation.error("HTTP 503 after 3 attempt(s)"))
    append_step(traj, search("c"), Observation.error(BUDGET_EXHAUSTED_NOTE))

    budget = recount_budget(traj)
    assert budget.calls_used == 2
    assert budget.entries_returned == 2


def test_rebuild_attempted_matches_live_sets():
    traj = new_trajectory("q")
    spawn_child(traj, "s1")
    append_step(traj, search("x"), Observation.empty())
    rollback(traj)
    live = set(traj.root.attempted)

    rebuild_attempted(traj)
    assert traj.root.attempted == live


def test_check_well_formed_rejects_missing_parent():
    traj = new_trajectory("q")
    traj.nodes[5] = TrajectoryNode(node_id=5, parent_id=9, question="orphan", spawn_index=0)
    with pytest.raises(MalformedTrajectory):
        check_well_formed(traj)


def test_check_well_formed_rejects_cycle():
    traj = new_trajectory("q")
    traj.nodes[1] = TrajectoryNode(node_id=1, parent_id=2, question="a", spawn_index=0)
    traj.nodes[2] = TrajectoryNode(node_id=2, parent_id=1, question="b", spawn_index=0)
    with pytest.raises(MalformedTrajectory):
        check_well_formed(traj)


def test_check_well_formed_rejects_finished_without_finish():
    traj = new_trajectory("q")
    traj.root.status = NodeStatus.FINISHED
    with pytest.raises(MalformedTrajectory):
        check_well_formed(traj)


def test_trajectory_digest_changes_with_content():
    first = new_trajectory("q")
    second = new_trajectory("q")
    assert trajectory_digest(first) == trajectory_digest(second)

    append_step(second, search("a"), hits("A"))
    assert trajectory_digest(first) != trajectory_digest(second)


def _random_observation(rng):
    if rng.random() < 0.3:
        return Observation.empty()
    return hits(*[f"T{rng.randrange(20)}" for _ in range(rng.randint(1, 5))])


@pytest.mark.parametrize('seed', range(500))
def test_rollback_restores_pre_spawn_state(seed):
    """Random growth/rollback sequences never leak abandoned steps into the live dialogue"""
    rng = random.Random(seed)
    traj = new_trajectory("episode question")
    spawned_from = {}
    counter = 0

    for _ in range(rng.randint(5, 30)):
        op = rng.choice(['append', 'append', 'spawn', 'rollback', 'finish'])
        if op == 'append':
            counter += 1
            append_step(traj, search(f"query {counter}"), _random_observation(rng))
        elif op == 'spawn' and traj.depth(traj.active_id) < 5:
            parent = traj.active
            snapshot = steps_digest(parent.steps)
            counter += 1
            spawn_child(traj, f"sub-question {counter}")
            spawned_from[traj.active_id] = (parent.node_id, snapshot)
        elif op == 'rollback' and not traj.active.is_root:
            child_id = traj.active_id
            rollback(traj)
            parent_id, snapshot = spawned_from[child_id]
            assert traj.active_id == parent_id
            assert steps_digest(traj.nodes[parent_id].steps) == snapshot
        elif op == 'finish' and not traj.active.is_root:
            finish(traj, f"answer {counter}")

        for step in visible_steps(traj):
            path = traj.path_to(step.node_id)
            assert all(node.status != NodeStatus.EXHAUSTED for node in path)
            assert not step.exhausted

    check_well_formed(traj)
