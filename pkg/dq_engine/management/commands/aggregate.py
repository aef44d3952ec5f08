from dq_engine.management.base import DQBaseCommand
from dq_engine.serializers import AggregateResultSerializer, AnswerSetInputSerializer, load
from dq_engine.services.aggregation_service import AggregationService
from dq_engine.services.policy_service import ChatCompletionClient
from dq_engine.utils.jsonl import iter_jsonl, write_jsonl


class Command(DQBaseCommand):
    help = 'Aggregate candidate answers per question: majority vote or viewpoints'

    def add_command_arguments(self, parser):
        parser.add_argument('--input', required=True, help='JSONL of {"question": str, "answers": [str, ...]}')
        parser.add_argument('--out', required=True, help='JSONL of aggregation results')
        parser.add_argument('--backend', choices=['heuristic', 'llm'], default=None,
                            help='Viewpoint clustering backend')
        parser.add_argument('--classifier', choices=['heuristic', 'llm'], default=None,
                            help='Objective/subjective classifier')

    def config_overrides(self, options):
        return {
            'aggregation.backend': options['backend'],
            'aggregation.classifier': options['classifier'],
        }

    def run(self, config, **options):
        client = None
        if 'llm' in (config.aggregation.backend, config.aggregation.classifier):
            client = ChatCompletionClient.from_config(config.backend)
        service = AggregationService.from_config(config, client=client)

        results = []
        for line_number, obj in iter_jsonl(options['input']):
            record = load(AnswerSetInputSerializer, obj, line=line_number)
            question_type, answer, viewpoints = service.aggregate(
                record['question'], record['answers'], record['question_type'],
            )
            results.append(AggregateResultSerializer({
                'question': record['question'],
                'question_type': question_type,
                'aggregated_answer': answer,
                'viewpoints': viewpoints,
            }).data)

        count = write_jsonl(options['out'], results)
        self.stdout.write(f"Aggregated {count} questions into {options['out']}")
