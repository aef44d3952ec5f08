"""
Line grammar between policy text and engine actions.

    [ToolName] <argument to end of line>
    [Decompose] <sub-question>
    [Rollback]

The first bracketed token in the text decides the action; prose before it is
discarded, as is everything after the end of its line. Tool names are
case-sensitive and must belong to the active toolset.
"""
import logging
import re

from dq_engine.exceptions import ParseError
from dq_engine.models import Action, ActionKind, ToolName, Toolset, TOOLSET_TOOLS, ToolCall

logger = logging.getLogger(__name__)

ROLLBACK_TOKEN = 'Rollback'
DECOMPOSE_TOKEN = 'Decompose'

_TOKEN_RE = re.compile(r'\[([A-Za-z]+)\]')


def _as_text(text):
    if isinstance(text, (bytes, bytearray)):
        return bytes(text).decode('utf-8', errors='replace')
    if text is None:
        return ''
    return str(text)


def _first_token(text):
    for line in text.splitlines():
        match = _TOKEN_RE.search(line)
        if match:
            return match.group(1), line[match.end():].strip()
    return None, None


def parse_action(text, toolset):
    """
    Parse policy output into an Action.

    Raises ParseError when no bracketed token exists, when the token names a
    tool outside the toolset, or when a required argument is missing.
    """
    toolset = Toolset(toolset)
    name, rest = _first_token(_as_text(text))
    if name is None:
        raise ParseError("no [Action] token found")

    if name == ROLLBACK_TOKEN:
        return Action.rollback()

    if name == DECOMPOSE_TOKEN:
        if not rest:
            raise ParseError("[Decompose] needs a sub-question")
        return Action.decompose(rest)

    allowed = TOOLSET_TOOLS[toolset]
    if name not in ToolName.values:
        raise ParseError(f"unknown action [{name}]")
    if name not in allowed:
        raise ParseError(f"tool [{name}] is not available in the {toolset.label} toolset")

    tool = ToolName(name)
    if tool != ToolName.FINISH and not rest:
        raise ParseError(f"[{name}] needs an argument")
    return Action(kind=ActionKind.INVOKE, call=ToolCall(tool, rest))


def render_tool_call(call):
    if not call.argument:
        return f"[{call.tool.value}]"
    return f"[{call.tool.value}] {call.argument}"


def render_action(action):
    """Canonical single-line form of an action"""
    if action.kind == ActionKind.ROLLBACK:
        return f"[{ROLLBACK_TOKEN}]"
    if action.kind == ActionKind.DECOMPOSE:
        return f"[{DECOMPOSE_TOKEN}] {action.sub_question}"
    return render_tool_call(action.call)


def action_names(toolset):
    """Tokens the policy may emit for a toolset, in prompt order"""
    names = [tool.value for tool in TOOLSET_TOOLS[Toolset(toolset)]]
    return names + [DECOMPOSE_TOKEN, ROLLBACK_TOKEN]
