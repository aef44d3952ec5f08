"""
Domain models for the Decompose-and-Query engine.

These are in-memory records; nothing here is a database table. Every record
that leaves the process goes through dq_engine.serializers as JSON/JSONL.
Enumerations reuse Django's TextChoices so values serialize as plain strings.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

from django.db import models

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# Per-episode retrieval budget defaults: 10 calls x 5 entries = 50 contexts
DEFAULT_MAX_RETRIEVER_CALLS = 10
DEFAULT_MAX_ENTRIES_PER_CALL = 5


class ToolName(models.TextChoices):
    QUESTION_RETRIEVER = 'QuestionRetriever', 'Question retriever'
    ANSWER_RETRIEVER = 'AnswerRetriever', 'Answer retriever'
    ARTICLE_RETRIEVER = 'ArticleRetriever', 'Article retriever'
    PAGE_RETRIEVER = 'PageRetriever', 'Page retriever'
    FINISH = 'Finish', 'Finish'


RETRIEVER_TOOLS = frozenset({
    ToolName.QUESTION_RETRIEVER,
    ToolName.ANSWER_RETRIEVER,
    ToolName.ARTICLE_RETRIEVER,
    ToolName.PAGE_RETRIEVER,
})


class Toolset(models.TextChoices):
    CHITCHAT = 'chitchat', 'ChitChat (reliable QA base)'
    WIKI = 'wiki', 'Wikipedia'


TOOLSET_TOOLS = {
    Toolset.CHITCHAT: (ToolName.QUESTION_RETRIEVER, ToolName.ANSWER_RETRIEVER, ToolName.FINISH),
    Toolset.WIKI: (ToolName.ARTICLE_RETRIEVER, ToolName.PAGE_RETRIEVER, ToolName.FINISH),
}


class ObservationKind(models.TextChoices):
    ENTRIES = 'entries', 'Entries'
    ANSWER = 'answer', 'Answer'
    EMPTY = 'empty', 'Empty'
    ERROR = 'error', 'Error'


class NodeStatus(models.TextChoices):
    OPEN = 'open', 'Open'
    EXHAUSTED = 'exhausted', 'Exhausted'
    FINISHED = 'finished', 'Finished'


class ActionKind(models.TextChoices):
    INVOKE = 'invoke', 'Invoke tool'
    ROLLBACK = 'rollback', 'Rollback'
    DECOMPOSE = 'decompose', 'Decompose'


class Termination(models.TextChoices):
    FINISHED = 'finished', 'Finished'
    BUDGET_EXHAUSTED = 'budget_exhausted', 'Budget exhausted'
    POLICY_FAILURE = 'policy_failure', 'Policy failure'
    DEPTH_LIMIT = 'depth_limit', 'Depth or step limit'


class QuestionType(models.TextChoices):
    OBJECTIVE = 'objective', 'Objective'
    SUBJECTIVE = 'subjective', 'Subjective'


class Role(models.TextChoices):
    SYSTEM = 'system', 'System'
    USER = 'user', 'User'
    ASSISTANT = 'assistant', 'Assistant'


class ExportMode(models.TextChoices):
    PER_ROUND = 'per-round', 'One example per assistant turn'
    SINGLE_SEQUENCE = 'single-sequence', 'One example per trajectory'


def _single_line(text):
    return len(text.splitlines()) <= 1


@dataclass(frozen=True)
class ToolCall:
    """A parsed tool invocation; argument is the query or the final answer"""
    tool: ToolName
    argument: str

    def __post_init__(self):
        object.__setattr__(self, 'tool', ToolName(self.tool))
        argument = (self.argument or '').strip()
        if not _single_line(argument):
            raise ValueError("Tool arguments must fit on one line")
        # Empty Finish is legal here; trajectory.finish() decides when it is allowed
        if not argument and self.tool != ToolName.FINISH:
            raise ValueError(f"{self.tool} requires a non-empty argument")
        object.__setattr__(self, 'argument', argument)

    @property
    def is_retrieval(self):
        return self.tool in RETRIEVER_TOOLS


class Entry(NamedTuple):
    """One retrieved entry: a title and a plain-text snippet"""
    title: str
    snippet: str


# Wiki tools return the same shape; the alias keeps call sites readable
WikiEntry = Entry


@dataclass(frozen=True)
class CorpusDoc:
    title: str
    body: str


@dataclass(frozen=True)
class Observation:
    """Evidence (or error) returned by a tool"""
    kind: ObservationKind
    entries: Optional[tuple] = None
    answer: Optional[str] = None
    error_note: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', ObservationKind(self.kind))
        if self.kind == ObservationKind.ENTRIES:
            entries = tuple(Entry(str(title), str(snippet)) for title, snippet in (self.entries or ()))
            if not entries:
                raise ValueError("An Entries observation needs at least one entry")
            object.__setattr__(self, 'entries', entries)
        elif self.entries is not None:
            raise ValueError(f"{self.kind} observations carry no entries")

    @classmethod
    def from_entries(cls, entries):
        """Entries observation, or Empty when nothing was found"""
        entries = tuple(entries)
        if not entries:
            return cls.empty()
        return cls(kind=ObservationKind.ENTRIES, entries=entries)

    @classmethod
    def empty(cls):
        return cls(kind=ObservationKind.EMPTY)

    @classmethod
    def answer_of(cls, answer):
        return cls(kind=ObservationKind.ANSWER, answer=answer)

    @classmethod
    def error(cls, note):
        return cls(kind=ObservationKind.ERROR, error_note=note)

    @property
    def entry_count(self):
        return len(self.entries) if self.kind == ObservationKind.ENTRIES else 0

    @property
    def titles(self):
        return [entry.title for entry in self.entries] if self.kind == ObservationKind.ENTRIES else []


class Step(NamedTuple):
    call: ToolCall
    observation: Observation


@dataclass(frozen=True)
class Budget:
    """Per-episode retrieval accounting with hard caps"""
    max_retriever_calls: int = DEFAULT_MAX_RETRIEVER_CALLS
    max_entries_per_call: int = DEFAULT_MAX_ENTRIES_PER_CALL
    calls_used: int = 0
    entries_returned: int = 0

    def __post_init__(self):
        if self.max_retriever_calls < 0 or self.max_entries_per_call < 1:
            raise ValueError("Budget caps must be non-negative with at least one entry per call")
        if self.calls_used > self.max_retriever_calls:
            raise ValueError("calls_used exceeds max_retriever_calls")
        if self.entries_returned > self.max_entries:
            raise ValueError("entries_returned exceeds the episode entry cap")

    @property
    def max_entries(self):
        return self.max_retriever_calls * self.max_entries_per_call

    @property
    def calls_left(self):
        return self.max_retriever_calls - self.calls_used

    @property
    def entries_left(self):
        return self.max_entries - self.entries_returned

    @property
    def exhausted(self):
        return self.calls_used >= self.max_retriever_calls

    def charge(self, entries):
        """Account for one retriever call that returned `entries` entries"""
        return replace(self, calls_used=self.calls_used + 1,
                       entries_returned=self.entries_returned + entries)

    def fresh(self):
        return replace(self, calls_used=0, entries_returned=0)


@dataclass
class TrajectoryNode:
    node_id: int
    parent_id: Optional[int]
    question: str
    steps: list = field(default_factory=list)
    status: NodeStatus = NodeStatus.OPEN
    # Number of parent steps when this node was spawned (None for the root)
    spawn_index: Optional[int] = None
    # (tool, argument) pairs made by Exhausted children; siblings must not repeat them
    attempted: set = field(default_factory=set, repr=False, compare=False)

    @property
    def is_root(self):
        return self.parent_id is None

    def __str__(self):
        return f"node {self.node_id} [{self.status}] {self.question}"


@dataclass
class Trajectory:
    """The full tree of sub-questions, tool calls and observations for one episode"""
    episode_question: str
    nodes: dict = field(default_factory=dict)
    active_id: int = 0
    budget_snapshots: dict = field(default_factory=dict)
    final_answer: Optional[str] = None
    terminal: bool = False
    # Toolset the episode ran with; None when not recorded
    toolset: Optional[str] = None

    @property
    def root(self):
        return next(node for node in self.nodes.values() if node.parent_id is None)

    @property
    def active(self):
        return self.nodes[self.active_id]

    @property
    def caps(self):
        """Budget caps the episode ran under, or None when they were not recorded"""
        recorded = self.budget_snapshots.get(self.root.node_id)
        return recorded.fresh() if recorded is not None else None

    @property
    def node_list(self):
        return [self.nodes[node_id] for node_id in sorted(self.nodes)]

    @property
    def finished(self):
        return self.root.status == NodeStatus.FINISHED

    def children_of(self, node_id):
        return [node for node in self.node_list if node.parent_id == node_id]

    def path_to(self, node_id):
        """Nodes from the root down to node_id"""
        path = []
        current = self.nodes[node_id]
        for _ in range(len(self.nodes)):
            path.append(current)
            if current.parent_id is None:
                return list(reversed(path))
            current = self.nodes[current.parent_id]
        raise ValueError(f"Parent chain from node {node_id} does not reach the root")

    def depth(self, node_id):
        """Root has depth 1"""
        return len(self.path_to(node_id))


@dataclass(frozen=True)
class Action:
    """One policy decision: invoke a tool, roll back, or decompose"""
    kind: ActionKind
    call: Optional[ToolCall] = None
    sub_question: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, 'kind', ActionKind(self.kind))
        if self.kind == ActionKind.INVOKE and self.call is None:
            raise ValueError("Invoke actions carry a tool call")
        if self.kind == ActionKind.DECOMPOSE:
            sub_question = (self.sub_question or '').strip()
            if not sub_question or not _single_line(sub_question):
                raise ValueError("Decompose needs a single-line, non-empty sub-question")
            object.__setattr__(self, 'sub_question', sub_question)

    @classmethod
    def invoke(cls, tool, argument=''):
        return cls(kind=ActionKind.INVOKE, call=ToolCall(tool, argument))

    @classmethod
    def rollback(cls):
        return cls(kind=ActionKind.ROLLBACK)

    @classmethod
    def decompose(cls, sub_question):
        return cls(kind=ActionKind.DECOMPOSE, sub_question=sub_question)

    @property
    def is_finish(self):
        return self.kind == ActionKind.INVOKE and self.call.tool == ToolName.FINISH


@dataclass(frozen=True)
class VisibleStep:
    """A step of the live dialogue, tagged with the node it came from"""
    node_id: int
    action: Action
    observation: Optional[Observation] = None
    # Remaining budget once this step has been accounted for
    calls_left: int = 0
    entries_left: int = 0
    # Sub-question being answered when a child node's Finish is lifted to its parent
    lifted_question: Optional[str] = None
    # Only set when exhausted branches are rendered as negative context
    exhausted: bool = False


@dataclass(frozen=True)
class EpisodeLimits:
    max_depth: int = 4
    max_steps: int = 25


@dataclass
class EpisodeResult:
    final_answer: Optional[str]
    trajectory: Trajectory
    budget: Budget
    termination: Termination
    # Answer produced by a forced finish that did not end as Finished
    best_effort_answer: Optional[str] = None

    @property
    def prediction(self):
        return self.final_answer or self.best_effort_answer or ''


# QA base

@dataclass(frozen=True)
class RawQAPair:
    question: str
    answer: str
    source_id: str = ''

    def __post_init__(self):
        if not self.question.strip() or not self.answer.strip():
            raise ValueError("Raw QA pairs need a non-empty question and answer")


@dataclass(frozen=True)
class ScorerConfig:
    epsilon1: float = 0.5
    epsilon2: float = 0.5
    top_k: int = 50000

    def __post_init__(self):
        if not (0 <= self.epsilon1 <= 1 and 0 <= self.epsilon2 <= 1):
            raise ValueError("Scorer thresholds must lie in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")


@dataclass(frozen=True)
class QuestionStub:
    """A selected question before its answer is aggregated"""
    question: str
    frequency: int


@dataclass(frozen=True)
class QARecord:
    question: str
    aggregated_answer: str
    question_type: QuestionType
    frequency: int
    gec_score: float
    intent_score: float

    def __post_init__(self):
        object.__setattr__(self, 'question_type', QuestionType(self.question_type))
        if self.frequency < 1:
            raise ValueError("QA records are merged from at least one raw occurrence")


# Aggregation

def answer_label(index):
    return f"Answer {index}"


@dataclass(frozen=True)
class AnswerSet:
    question: str
    candidates: tuple

    def __post_init__(self):
        candidates = tuple((str(answer_id), str(text)) for answer_id, text in self.candidates)
        if not candidates:
            raise ValueError("An answer set holds at least one candidate")
        for position, (answer_id, _) in enumerate(candidates, start=1):
            if answer_id != answer_label(position):
                raise ValueError(f"Answer ids must run 'Answer 1'..'Answer N'; got {answer_id!r} at {position}")
        object.__setattr__(self, 'candidates', candidates)

    @classmethod
    def from_texts(cls, question, texts):
        return cls(question=question,
                   candidates=tuple((answer_label(i), text) for i, text in enumerate(texts, start=1)))

    @property
    def ids(self):
        return [answer_id for answer_id, _ in self.candidates]

    def text_of(self, answer_id):
        return dict(self.candidates)[answer_id]


@dataclass(frozen=True)
class Viewpoint:
    summary: str
    member_ids: tuple

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError("A viewpoint groups at least one answer")
        object.__setattr__(self, 'member_ids', tuple(self.member_ids))


# Policy

@dataclass(frozen=True)
class PolicyContext:
    episode_question: str
    visible_steps: tuple
    toolset: Toolset
    budget: Budget
    # Extra instruction appended to the last user turn (forced finish)
    notice: Optional[str] = None

    @property
    def calls_left(self):
        return self.budget.calls_left

    @property
    def entries_left(self):
        return self.budget.entries_left

    @property
    def remaining_budget(self):
        return self.calls_left, self.entries_left

    def with_notice(self, notice):
        return replace(self, notice=notice)


# SFT export

@dataclass(frozen=True)
class SFTTurn:
    role: Role
    content: str
    train_on: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'role', Role(self.role))
        if self.train_on and self.role != Role.ASSISTANT:
            raise ValueError("Only assistant turns can be trainable")


@dataclass(frozen=True)
class SFTExample:
    turns: tuple

    @property
    def trainable_turns(self):
        return [turn for turn in self.turns if turn.train_on]


# Evaluation

@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    gold_answer: str
    gold_support_titles: frozenset = frozenset()


@dataclass(frozen=True)
class EvalResult:
    em: float
    f1: float
    recall: Optional[float]
    avg_contexts: float
    n_items: int
