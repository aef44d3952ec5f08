"""
DRF serializers for every file format the engine reads or writes.

Output: Serializer(instance).data, fields in the documented order, with
"schema_version" appended last. Input: load(SerializerClass, obj) validates a
decoded JSON object and returns the domain object (validate() builds it), or
raises SchemaError.
"""
import logging

from rest_framework import serializers

from dq_engine.exceptions import MalformedTrajectory, SchemaError
from dq_engine.models import (
    DEFAULT_MAX_ENTRIES_PER_CALL, SCHEMA_VERSION, Budget, CorpusDoc, EvalItem, NodeStatus, Observation,
    ObservationKind, QARecord, QuestionType, RawQAPair, Role, SFTExample, SFTTurn, Step, Termination,
    ToolCall, ToolName, Toolset, Trajectory, TrajectoryNode,
)
from dq_engine.utils.trajectory import check_well_formed, rebuild_attempted

logger = logging.getLogger(__name__)


def _text(**kwargs):
    """CharField that keeps content byte-for-byte"""
    kwargs.setdefault('trim_whitespace', False)
    return serializers.CharField(**kwargs)


def _first_error(errors, path=''):
    if isinstance(errors, dict):
        for key, value in errors.items():
            prefix = path if key == 'non_field_errors' else (f"{path}.{key}" if path else str(key))
            return _first_error(value, prefix)
    if isinstance(errors, list):
        for index, value in enumerate(errors):
            if value:
                if isinstance(value, (dict, list)):
                    return _first_error(value, f"{path}[{index}]")
                return f"{path}: {value}" if path else str(value)
    return f"{path}: {errors}" if path else str(errors)


def load(serializer_class, data, line=None, **kwargs):
    serializer = serializer_class(data=data, **kwargs)
    if not serializer.is_valid():
        raise SchemaError(_first_error(serializer.errors), line=line)
    return serializer.validated_data


class VersionedSerializer(serializers.Serializer):
    """Appends schema_version on output and checks it (when present) on input"""
    schema_version = serializers.IntegerField(write_only=True, required=False)

    def to_representation(self, instance):
        data = super().to_representation(instance)
        data['schema_version'] = SCHEMA_VERSION
        return data

    def validate_schema_version(self, value):
        if value != SCHEMA_VERSION:
            raise serializers.ValidationError(f"unsupported schema_version {value}")
        return value


# Trajectory

class ObservationSerializer(serializers.Serializer):
    kind = serializers.ChoiceField(choices=ObservationKind.choices)
    entries = serializers.ListField(
        child=serializers.ListField(child=_text(allow_blank=True), min_length=2, max_length=2),
        allow_null=True, required=False, default=None,
    )
    answer = _text(allow_null=True, allow_blank=True, required=False, default=None)
    error_note = _text(allow_null=True, allow_blank=True, required=False, default=None)

    def validate(self, attrs):
        entries = attrs.get('entries')
        try:
            return Observation(
                kind=attrs['kind'],
                entries=tuple(tuple(entry) for entry in entries) if entries is not None else None,
                answer=attrs.get('answer'),
                error_note=attrs.get('error_note'),
            )
        except ValueError as e:
            raise serializers.ValidationError(str(e))


class StepSerializer(serializers.Serializer):
    tool = serializers.ChoiceField(choices=ToolName.choices, source='call.tool')
    arg = _text(allow_blank=True, source='call.argument')
    obs = ObservationSerializer(source='observation')

    def validate(self, attrs):
        try:
            call = ToolCall(attrs['call']['tool'], attrs['call']['argument'])
        except ValueError as e:
            raise serializers.ValidationError(str(e))
        return Step(call, attrs['observation'])


class TrajectoryNodeSerializer(serializers.Serializer):
    id = serializers.IntegerField(source='node_id', min_value=0)
    parent = serializers.IntegerField(source='parent_id', allow_null=True, min_value=0)
    question = serializers.CharField()
    status = serializers.ChoiceField(choices=NodeStatus.choices)
    steps = StepSerializer(many=True)
    spawn_index = serializers.IntegerField(allow_null=True, required=False, default=None, min_value=0)

    def validate(self, attrs):
        return TrajectoryNode(
            node_id=attrs['node_id'],
            parent_id=attrs['parent_id'],
            question=attrs['question'],
            steps=list(attrs['steps']),
            status=NodeStatus(attrs['status']),
            spawn_index=attrs.get('spawn_index'),
        )


class BudgetCapsSerializer(serializers.Serializer):
    max_retriever_calls = serializers.IntegerField(min_value=0)
    max_entries_per_call = serializers.IntegerField(min_value=1, max_value=DEFAULT_MAX_ENTRIES_PER_CALL)

    def validate(self, attrs):
        try:
            return Budget(**attrs)
        except ValueError as e:
            raise serializers.ValidationError(str(e))


class TrajectorySerializer(VersionedSerializer):
    question = serializers.CharField(source='episode_question')
    toolset = serializers.ChoiceField(choices=Toolset.choices, allow_null=True, required=False, default=None)
    budget = BudgetCapsSerializer(source='caps', allow_null=True, required=False, default=None)
    final_answer = _text(allow_null=True, allow_blank=True)
    nodes = TrajectoryNodeSerializer(many=True, source='node_list')

    def validate(self, attrs):
        nodes = {}
        for node in attrs['node_list']:
            if node.node_id in nodes:
                raise serializers.ValidationError(f"duplicate node id {node.node_id}")
            nodes[node.node_id] = node

        roots = [node for node in nodes.values() if node.parent_id is None]
        if len(roots) != 1:
            raise serializers.ValidationError(f"expected exactly one root, found {len(roots)}")

        # Recorded trajectories are complete episodes
        traj = Trajectory(
            episode_question=attrs['episode_question'],
            nodes=nodes,
            active_id=roots[0].node_id,
            budget_snapshots={roots[0].node_id: attrs['caps']} if attrs.get('caps') else {},
            final_answer=attrs.get('final_answer') or None,
            terminal=True,
            toolset=Toolset(attrs['toolset']) if attrs.get('toolset') else None,
        )
        try:
            check_well_formed(traj)
        except MalformedTrajectory as e:
            raise serializers.ValidationError(str(e))
        return rebuild_attempted(traj)


# QA base

class RawQAPairSerializer(serializers.Serializer):
    question = serializers.CharField()
    answer = serializers.CharField()
    source_id = serializers.CharField(allow_blank=True, required=False, default='')

    def validate(self, attrs):
        return RawQAPair(**attrs)


class QARecordSerializer(VersionedSerializer):
    question = serializers.CharField()
    aggregated_answer = _text()
    question_type = serializers.ChoiceField(choices=QuestionType.choices)
    frequency = serializers.IntegerField(min_value=1)
    gec_score = serializers.FloatField(min_value=0.0, max_value=1.0)
    intent_score = serializers.FloatField(min_value=0.0, max_value=1.0)

    def validate(self, attrs):
        attrs.pop('schema_version', None)
        return QARecord(**attrs)


class CorpusDocSerializer(serializers.Serializer):
    title = serializers.CharField()
    body = _text(allow_blank=True)

    def validate(self, attrs):
        return CorpusDoc(**attrs)


# Aggregation

class AnswerSetInputSerializer(serializers.Serializer):
    question = serializers.CharField(allow_blank=True)
    answers = serializers.ListField(child=_text(), min_length=1)
    # Skips classification when given
    question_type = serializers.ChoiceField(
        choices=QuestionType.choices, required=False, default=None, allow_null=True,
    )


class ViewpointSerializer(serializers.Serializer):
    summary = _text()
    answer_ids = serializers.ListField(child=serializers.CharField(), source='member_ids')


class AggregateResultSerializer(VersionedSerializer):
    question = serializers.CharField()
    question_type = serializers.ChoiceField(choices=QuestionType.choices)
    aggregated_answer = _text()
    viewpoints = ViewpointSerializer(many=True, allow_null=True)


# SFT export

class SFTTurnSerializer(serializers.Serializer):
    role = serializers.ChoiceField(choices=Role.choices)
    content = _text(allow_blank=True)
    train_on = serializers.BooleanField()

    def validate(self, attrs):
        try:
            return SFTTurn(**attrs)
        except ValueError as e:
            raise serializers.ValidationError(str(e))


class SFTExampleSerializer(VersionedSerializer):
    turns = SFTTurnSerializer(many=True)

    def validate(self, attrs):
        return SFTExample(turns=tuple(attrs['turns']))


# Evaluation

class HotpotItemSerializer(serializers.Serializer):
    """One record of the public HotPotQA JSON (extra keys such as context are ignored)"""
    _id = serializers.CharField()
    question = serializers.CharField()
    answer = _text(allow_blank=True)
    supporting_facts = serializers.ListField(child=serializers.ListField(min_length=1), required=False, default=list)

    def validate(self, attrs):
        titles = frozenset(str(fact[0]) for fact in attrs.get('supporting_facts') or [])
        return EvalItem(id=attrs['_id'], question=attrs['question'],
                        gold_answer=attrs['answer'], gold_support_titles=titles)


class EvalItemResultSerializer(VersionedSerializer):
    id = serializers.CharField()
    prediction = _text(allow_blank=True)
    gold = _text(allow_blank=True)
    em = serializers.FloatField()
    f1 = serializers.FloatField()
    recall = serializers.FloatField(allow_null=True)
    contexts = serializers.IntegerField()
    termination = serializers.ChoiceField(choices=Termination.choices)
    error = serializers.CharField(allow_null=True, required=False)


class BaselineReportSerializer(serializers.Serializer):
    recall = serializers.FloatField(allow_null=True)
    avg_contexts = serializers.FloatField()
    n = serializers.IntegerField()


class EvalReportSerializer(VersionedSerializer):
    em = serializers.FloatField()
    f1 = serializers.FloatField()
    recall = serializers.FloatField(allow_null=True)
    avg_contexts = serializers.FloatField()
    n = serializers.IntegerField(source='n_items')
    terminations = serializers.DictField(child=serializers.IntegerField())
    baseline = BaselineReportSerializer(allow_null=True)


class ScriptedPolicyInputSerializer(serializers.Serializer):
    id = serializers.CharField()
    actions = serializers.ListField(child=serializers.CharField())
