"""
Policies choose the next action from the dialogue so far.

ScriptedPolicy replays a fixed action list (tests, replays, oracle runs).
LLMPolicy renders the context as a chat transcript, asks a chat-completion
backend and parses the reply with the action grammar.
"""
import logging
import threading

import requests

from dq_engine.exceptions import BackendError, ConfigError, ParseError, ScriptExhausted
from dq_engine.models import TOOLSET_TOOLS, ActionKind, Observation, ObservationKind, Role, ToolName, Toolset
from dq_engine.utils.action_grammar import parse_action, render_action
from dq_engine.utils.http import build_session

logger = logging.getLogger(__name__)

DEFAULT_RETRIES = 2

TOOL_DESCRIPTIONS = {
    ToolName.QUESTION_RETRIEVER: "[QuestionRetriever] <query>: find related questions in the reliable QA base.",
    ToolName.ANSWER_RETRIEVER: "[AnswerRetriever] <question>: fetch the stored answer for an exact QA-base question.",
    ToolName.ARTICLE_RETRIEVER: "[ArticleRetriever] <query>: search Wikipedia entries.",
    ToolName.PAGE_RETRIEVER: "[PageRetriever] <title>: read the leading text of a Wikipedia page.",
    ToolName.FINISH: "[Finish] <answer>: give the final answer to the current question.",
}

TOOLSET_INTRO = {
    Toolset.CHITCHAT: "Answer the user's question using the reliable QA base. "
                      "When the base has an answer it takes precedence over your own knowledge.",
    Toolset.WIKI: "Answer the user's question using evidence retrieved from Wikipedia only.",
}

BUDGET_NOTICE = "The retrieval budget is exhausted. Answer now with [Finish] <answer>."
NO_EVIDENCE_NOTICE = "No further search is possible. Answer now with [Finish] <answer>."
ABANDONED_NOTICE = "Sub-question already abandoned: {sub_question}. Choose a different action."


def system_prompt(toolset):
    toolset = Toolset(toolset)
    lines = [TOOLSET_INTRO[toolset], "", "Reply with exactly one action on its own line:"]
    lines += [TOOL_DESCRIPTIONS[tool] for tool in TOOLSET_TOOLS[toolset]]
    lines += [
        "[Decompose] <sub-question>: work on a simpler sub-question first; finish it with [Finish] <sub-answer>.",
        "[Rollback]: abandon the current sub-question and return to the previous one.",
    ]
    return '\n'.join(lines)


def budget_line(calls_left, entries_left):
    return f"Remaining budget: {calls_left} retriever calls, {entries_left} entries."


def render_observation(obs):
    if obs.kind == ObservationKind.ENTRIES:
        return '\n'.join(f"({i}) {entry.title} — {entry.snippet}" for i, entry in enumerate(obs.entries, start=1))
    if obs.kind == ObservationKind.ANSWER:
        return f"Answer: {obs.answer}"
    if obs.kind == ObservationKind.ERROR:
        return f"Error: {obs.error_note}"
    return "No results."


def render_dialogue(episode_question, toolset, caps, steps, notice=None):
    """
    Dialogue for a list of VisibleSteps as (role, content, exhausted) triples.

    Each assistant turn is followed by a user turn except for the root Finish,
    which ends the dialogue. Every user turn ends with the remaining budget.
    """
    turns = [
        (Role.SYSTEM, system_prompt(toolset), False),
        (Role.USER, f"Question: {episode_question}\n{budget_line(caps.max_retriever_calls, caps.max_entries)}", False),
    ]

    for step in steps:
        action = step.action
        turns.append((Role.ASSISTANT, render_action(action), step.exhausted))
        remaining = budget_line(step.calls_left, step.entries_left)

        if action.kind == ActionKind.DECOMPOSE:
            content = f"Sub-question: {action.sub_question}"
        elif action.kind == ActionKind.ROLLBACK:
            content = "Rolled back to the previous question."
        elif action.call.tool == ToolName.FINISH:
            if step.lifted_question is None:
                continue
            content = f"Sub-answer: {step.lifted_question} -> {action.call.argument}"
        else:
            content = render_observation(step.observation or Observation.empty())
        turns.append((Role.USER, f"{content}\n{remaining}", step.exhausted))

    if notice and turns[-1][0] == Role.USER:
        role, content, exhausted = turns[-1]
        turns[-1] = (role, f"{content}\n{notice}", exhausted)
    return turns


def render_transcript(ctx):
    """Chat transcript for a PolicyContext as (role, content) pairs"""
    dialogue = render_dialogue(ctx.episode_question, ctx.toolset, ctx.budget, ctx.visible_steps, ctx.notice)
    return [(role, content) for role, content, _ in dialogue]


def transcript_messages(transcript):
    return [{'role': role.value, 'content': content} for role, content in transcript]


class ScriptedPolicy:
    """Returns a fixed sequence of actions, one per call"""

    def __init__(self, script):
        self.script = list(script)
        self.cursor = 0

    @classmethod
    def from_lines(cls, lines, toolset):
        return cls([parse_action(line, toolset) for line in lines])

    def next_action(self, ctx):
        if self.cursor >= len(self.script):
            raise ScriptExhausted(f"script of {len(self.script)} actions is exhausted")
        action = self.script[self.cursor]
        self.cursor += 1
        return action


class ChatCompletionClient:
    """
    Minimal OpenAI-style chat-completion client.

    No HTTP-level retries: callers count backend calls. Concurrent requests
    from all threads sharing the client are capped at max_in_flight.
    """

    def __init__(self, url, model, token=None, timeout=60.0, params=None, max_in_flight=4, session=None):
        if not url:
            raise ConfigError("chat-completion backend URL is not configured (backend.url)")
        self.url = url
        self.model = model
        self.token = token
        self.timeout = timeout
        self.params = dict(params or {})
        self.session = session or build_session()
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_config(cls, backend_config, session=None):
        return cls(
            url=backend_config.url,
            model=backend_config.model,
            token=backend_config.token(),
            timeout=backend_config.timeout,
            params=backend_config.params,
            max_in_flight=backend_config.max_in_flight,
            session=session,
        )

    def complete(self, messages):
        """Send the messages and return the assistant reply text"""
        payload = {'model': self.model, 'messages': messages, **self.params}
        headers = {'Content-Type': 'application/json'}
        if self.token:
            headers['Authorization'] = f"Bearer {self.token}"

        with self._slots:
            try:
                response = self.session.post(self.url, json=payload, headers=headers, timeout=self.timeout)
            except requests.exceptions.RequestException as e:
                raise BackendError(None, str(e))

        if response.status_code >= 400:
            raise BackendError(response.status_code, response.text[:200])
        try:
            content = response.json()['choices'][0]['message']['content']
        except (ValueError, KeyError, IndexError, TypeError):
            raise BackendError(response.status_code, "malformed chat-completion response")
        if not isinstance(content, str):
            raise BackendError(response.status_code, "chat-completion content is not text")
        return content


class LLMPolicy:
    """Asks a chat-completion backend; re-asks up to `retries` times when the reply does not parse"""

    def __init__(self, client, retries=DEFAULT_RETRIES):
        self.client = client
        self.retries = retries

    def next_action(self, ctx):
        messages = transcript_messages(render_transcript(ctx))
        last_error = None

        for attempt in range(self.retries + 1):
            reply = self.client.complete(messages)
            try:
                return parse_action(reply, ctx.toolset)
            except ParseError as e:
                last_error = e
                logger.warning(f"Unparseable policy reply (attempt {attempt + 1}/{self.retries + 1}): {e.reason}")
                messages = messages + [
                    {'role': Role.ASSISTANT.value, 'content': reply},
                    {'role': Role.USER.value,
                     'content': f"Your reply contained no valid action ({e.reason}). "
                                f"Reply with exactly one action line, for example [Finish] <answer>."},
                ]
        raise last_error


def build_policy(config, script_lines=None, client=None):
    """Scripted policy when action lines are given, otherwise the configured chat backend"""
    if script_lines is not None:
        return ScriptedPolicy.from_lines(script_lines, config.toolset)
    client = client or ChatCompletionClient.from_config(config.backend)
    return LLMPolicy(client, retries=config.policy.retries)
