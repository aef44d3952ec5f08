from dq_engine.management.base import DQBaseCommand
from dq_engine.services.aggregation_service import AggregationService
from dq_engine.services.policy_service import ChatCompletionClient
from dq_engine.services.qa_base_service import QABaseBuilder, QABaseStore, build_scorers, read_raw_pairs


class Command(DQBaseCommand):
    help = 'Build the reliable QA base from raw question-answer pairs (JSONL)'

    def add_command_arguments(self, parser):
        parser.add_argument('--input', required=True, help='Raw QA pairs, one {"question", "answer"} per line')
        parser.add_argument('--out', required=True, help='Directory for qa_base.jsonl and its postings sidecar')
        parser.add_argument('--epsilon1', type=float, default=None, help='Grammar score threshold (exclusive)')
        parser.add_argument('--epsilon2', type=float, default=None, help='Intent score threshold (exclusive)')
        parser.add_argument('--top-k', type=int, default=None, help='Number of most frequent questions to keep')
        parser.add_argument('--scorer', choices=['heuristic', 'http'], default=None,
                            help='Scorer implementation for grammar and intent')

    def config_overrides(self, options):
        return {
            'scorer.epsilon1': options['epsilon1'],
            'scorer.epsilon2': options['epsilon2'],
            'scorer.top_k': options['top_k'],
            'scorer.kind': options['scorer'],
            'paths.base': options['out'],
        }

    def run(self, config, **options):
        pairs = read_raw_pairs(options['input'])
        gec, intent = build_scorers(config.scorer)

        client = None
        if 'llm' in (config.aggregation.backend, config.aggregation.classifier):
            client = ChatCompletionClient.from_config(config.backend)
        aggregation = AggregationService.from_config(config, client=client)

        records = QABaseBuilder(gec, intent, config.scorer.to_scorer_config(), aggregation).build(pairs)
        directory = QABaseStore.save(records, config.paths.base)
        self.stdout.write(f"Wrote {len(records)} QA records to {directory}")
