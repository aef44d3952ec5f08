"""
The Decompose-and-Query episode loop.

Each iteration asks the policy for one action and applies it to the trajectory:
retrievals go through dispatch() under the episode budget, an Empty result
rolls the active sub-question back, Decompose opens a sub-question and Finish
either answers a sub-question (lifting the answer to its parent) or ends the
episode. Every failure ends in a termination variant; nothing escapes run().
"""
import logging

from dq_engine.exceptions import AtRoot, BudgetExceeded, ConfigError, DQError, EmptyAnswer, UnknownTool
from dq_engine.models import (
    ActionKind, Budget, EpisodeLimits, EpisodeResult, Observation, ObservationKind, PolicyContext,
    Termination, ToolName, Toolset, TOOLSET_TOOLS,
)
from dq_engine.services.policy_service import ABANDONED_NOTICE, BUDGET_NOTICE, NO_EVIDENCE_NOTICE
from dq_engine.services.qa_base_service import QABaseStore
from dq_engine.services.wiki_service import build_wiki_backend
from dq_engine.utils.trajectory import (
    BUDGET_EXHAUSTED_NOTE, DECOMPOSE_MARKER, REFUSED_NOTE, abort, append_step, attempted_calls,
    finish, new_trajectory, rollback, spawn_child, unwind_to_root, visible_steps,
)

logger = logging.getLogger(__name__)


class ToolRegistry:
    """Handlers for the retriever tools of one toolset: handler(argument, limit) -> Observation"""

    def __init__(self, toolset, handlers, answer_lookup=None):
        self.toolset = Toolset(toolset)
        allowed = set(TOOLSET_TOOLS[self.toolset])
        for tool in handlers:
            if tool not in allowed:
                raise UnknownTool(f"{tool} is not part of the {self.toolset.label} toolset")
        self.handlers = {ToolName(tool): handler for tool, handler in handlers.items()}
        # Exact-match base lookup used for the ChitChat short-circuit
        self.answer_lookup = answer_lookup

    @classmethod
    def for_chitchat(cls, store):
        return cls(
            Toolset.CHITCHAT,
            {
                ToolName.QUESTION_RETRIEVER: lambda argument, limit: store.question_retrieve(argument, limit),
                ToolName.ANSWER_RETRIEVER: lambda argument, limit: store.answer_retrieve(argument),
            },
            answer_lookup=store.answer_retrieve,
        )

    @classmethod
    def for_wiki(cls, backend):
        return cls(
            Toolset.WIKI,
            {
                ToolName.ARTICLE_RETRIEVER: lambda argument, limit: backend.article_search(argument, limit),
                ToolName.PAGE_RETRIEVER: lambda argument, limit: backend.page_fetch(argument),
            },
        )

    @classmethod
    def from_config(cls, config, session=None):
        """Registry for config.toolset backed by the configured QA base or wiki backend"""
        if config.toolset == Toolset.CHITCHAT:
            if not config.paths.base:
                raise ConfigError("the ChitChat toolset needs a QA base directory (--base)")
            return cls.for_chitchat(QABaseStore.load(config.paths.base))
        return cls.for_wiki(build_wiki_backend(config, session=session))

    def __contains__(self, tool):
        return tool == ToolName.FINISH or tool in self.handlers

    def handler(self, tool):
        try:
            return self.handlers[tool]
        except KeyError:
            raise UnknownTool(f"{tool} is not registered for the {self.toolset.label} toolset")


def dispatch(tool_call, registry, budget):
    """
    Run one tool call. Retriever calls are charged one call plus the entries
    returned; Finish is free. Returns (observation, budget).
    """
    if tool_call.tool not in registry:
        raise UnknownTool(f"{tool_call.tool} is not registered for the {registry.toolset.label} toolset")
    if tool_call.tool == ToolName.FINISH:
        return Observation.answer_of(tool_call.argument), budget
    if budget.exhausted:
        raise BudgetExceeded(f"all {budget.max_retriever_calls} retriever calls used")

    handler = registry.handler(tool_call.tool)
    try:
        obs = handler(tool_call.argument, budget.max_entries_per_call)
    except DQError as e:
        logger.error(f"{tool_call.tool} failed for {tool_call.argument!r}: {e}")
        obs = Observation.error(str(e))

    if obs.entry_count > budget.max_entries_per_call:
        logger.warning(f"{tool_call.tool} returned {obs.entry_count} entries; "
                       f"clamped to {budget.max_entries_per_call}")
        obs = Observation.from_entries(obs.entries[:budget.max_entries_per_call])
    return obs, budget.charge(obs.entry_count)


class SearchEngine:
    """One engine per episode; single-threaded"""

    def __init__(self, policy, registry, budget=None, limits=None):
        self.policy = policy
        self.registry = registry
        self.toolset = registry.toolset
        self.budget = (budget or Budget()).fresh()
        self.limits = limits or EpisodeLimits()
        self.steps_taken = 0

    def _context(self, traj, notice=None):
        return PolicyContext(
            episode_question=traj.episode_question,
            visible_steps=tuple(visible_steps(traj, caps=self.budget)),
            toolset=self.toolset,
            budget=self.budget,
            notice=notice,
        )

    def _result(self, traj, termination, best_effort_answer=None):
        final_answer = traj.final_answer if termination == Termination.FINISHED else None
        logger.info(f"Episode ended {termination.value}: calls={self.budget.calls_used} "
                    f"entries={self.budget.entries_returned} nodes={len(traj.nodes)}")
        return EpisodeResult(
            final_answer=final_answer,
            trajectory=traj,
            budget=self.budget,
            termination=termination,
            best_effort_answer=best_effort_answer,
        )

    def _ask(self, traj, notice=None):
        self.steps_taken += 1
        return self.policy.next_action(self._context(traj, notice))

    def _short_circuit(self, traj):
        if self.toolset != Toolset.CHITCHAT or self.registry.answer_lookup is None:
            return None
        try:
            obs = self.registry.answer_lookup(traj.episode_question)
        except DQError as e:
            logger.error(f"QA base lookup failed, continuing without it: {e}")
            return None
        if obs.kind != ObservationKind.ANSWER or not obs.answer.strip():
            return None
        logger.info("Episode question found in the QA base; answering from the base")
        finish(traj, obs.answer)
        return self._result(traj, Termination.FINISHED)

    def _finish_without_budget(self, traj):
        """Forced finish after the retrieval budget ran out: empty answers are allowed"""
        unwind_to_root(traj)
        answer = ''
        if self.steps_taken < self.limits.max_steps:
            try:
                action = self._ask(traj, notice=BUDGET_NOTICE)
                if action.is_finish:
                    answer = action.call.argument
            except DQError as e:
                logger.error(f"Policy failed on the forced finish: {e}")
        finish(traj, answer, budget_exhausted=True)
        return self._result(traj, Termination.BUDGET_EXHAUSTED, best_effort_answer=answer or None)

    def _finish_at_root(self, traj):
        """Forced finish after a rollback at the root: only a real answer counts"""
        if self.steps_taken >= self.limits.max_steps:
            abort(traj)
            return self._result(traj, Termination.DEPTH_LIMIT)
        try:
            action = self._ask(traj, notice=NO_EVIDENCE_NOTICE)
        except DQError as e:
            logger.error(f"Policy failed on the forced finish: {e}")
            action = None
        if action is not None and action.is_finish and action.call.argument:
            finish(traj, action.call.argument)
            return self._result(traj, Termination.FINISHED)
        abort(traj)
        return self._result(traj, Termination.POLICY_FAILURE)

    def run(self, question):
        traj = new_trajectory(question, self.budget, toolset=self.toolset)
        self.steps_taken = 0

        result = self._short_circuit(traj)
        if result is not None:
            return result

        notice = None
        while True:
            if self.steps_taken >= self.limits.max_steps:
                logger.warning(f"Step limit {self.limits.max_steps} reached")
                abort(traj)
                return self._result(traj, Termination.DEPTH_LIMIT)

            try:
                action = self._ask(traj, notice=notice)
            except DQError as e:
                logger.error(f"Policy failed: {e}")
                abort(traj)
                return self._result(traj, Termination.POLICY_FAILURE)
            notice = None

            if action.kind == ActionKind.ROLLBACK:
                try:
                    rollback(traj)
                except AtRoot:
                    return self._finish_at_root(traj)
                continue

            if action.kind == ActionKind.DECOMPOSE:
                if (DECOMPOSE_MARKER, action.sub_question) in attempted_calls(traj):
                    logger.info(f"Skipping sub-question already abandoned: {action.sub_question!r}")
                    notice = ABANDONED_NOTICE.format(sub_question=action.sub_question)
                    continue
                if traj.depth(traj.active_id) + 1 > self.limits.max_depth:
                    logger.warning(f"Depth limit {self.limits.max_depth} reached")
                    abort(traj)
                    return self._result(traj, Termination.DEPTH_LIMIT)
                spawn_child(traj, action.sub_question, self.budget)
                continue

            call = action.call
            if call.tool == ToolName.FINISH:
                try:
                    finish(traj, call.argument)
                except EmptyAnswer:
                    logger.error("Policy finished with an empty answer while budget remains")
                    abort(traj)
                    return self._result(traj, Termination.POLICY_FAILURE)
                if traj.terminal:
                    return self._result(traj, Termination.FINISHED)
                continue

            if (call.tool.value, call.argument) in attempted_calls(traj):
                logger.info(f"Refusing {call.tool} {call.argument!r}: already tried in an abandoned branch")
                append_step(traj, call, Observation.error(REFUSED_NOTE))
                continue

            try:
                obs, self.budget = dispatch(call, self.registry, self.budget)
            except BudgetExceeded:
                append_step(traj, call, Observation.error(BUDGET_EXHAUSTED_NOTE))
                return self._finish_without_budget(traj)
            except UnknownTool as e:
                logger.error(str(e))
                abort(traj)
                return self._result(traj, Termination.POLICY_FAILURE)

            append_step(traj, call, obs)
            if obs.kind == ObservationKind.EMPTY:
                try:
                    rollback(traj)
                except AtRoot:
                    return self._finish_at_root(traj)


def run_episode(question, policy, tools, budget=None, limits=None):
    return SearchEngine(policy, tools, budget=budget, limits=limits).run(question)
