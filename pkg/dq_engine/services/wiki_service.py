"""
Wikipedia tools: ArticleRetriever (search) and PageRetriever (page extract).

Two interchangeable backends: OfflineCorpusBackend (frozen JSONL corpus, BM25)
for reproducible runs and tests, and MediaWikiBackend for a live
MediaWiki-compatible API.
"""
import html
import logging
import re

from dq_engine.exceptions import ConfigError, MalformedResponse, NetworkError, SchemaError
from dq_engine.models import Entry, Observation
from dq_engine.serializers import CorpusDocSerializer, load
from dq_engine.utils.bm25 import BM25Index
from dq_engine.utils.http import RateLimiter, build_session, retry_on_failure
from dq_engine.utils.jsonl import iter_jsonl
from dq_engine.utils.text import canonicalize, leading_sentence, one_line, truncate_at_sentence

logger = logging.getLogger(__name__)

MAX_SEARCH_LIMIT = 5
DEFAULT_PAGE_CHARS = 1200

_TAG_RE = re.compile(r'<[^>]*>')
_WIKI_QUOTES_RE = re.compile(r"'{2,}")


def strip_markup(text):
    """Plain text from a search snippet: tags, bold/italic quotes and entities removed"""
    text = _TAG_RE.sub('', text or '')
    text = _WIKI_QUOTES_RE.sub('', text)
    return one_line(html.unescape(text))


def _check_limit(limit):
    if limit < 1:
        raise ValueError("search limit must be at least 1")
    return min(limit, MAX_SEARCH_LIMIT)


class OfflineCorpusBackend:
    """Frozen corpus searched with the same BM25 scorer as the QA base"""

    def __init__(self, docs, page_chars=DEFAULT_PAGE_CHARS):
        self.docs = {}
        for doc in docs:
            if doc.title in self.docs:
                raise SchemaError(f"duplicate corpus title {doc.title!r}")
            self.docs[doc.title] = doc
        self.page_chars = page_chars
        self._by_canonical_title = {canonicalize(title): title for title in self.docs}
        titles = list(self.docs)
        self.index = BM25Index.build(titles, [self.docs[title].body for title in titles])
        logger.info(f"Offline corpus ready: {len(self.docs)} documents")

    @classmethod
    def from_jsonl(cls, path, page_chars=DEFAULT_PAGE_CHARS):
        docs = [load(CorpusDocSerializer, obj, line=line_number) for line_number, obj in iter_jsonl(path)]
        return cls(docs, page_chars=page_chars)

    def article_search(self, query, limit=MAX_SEARCH_LIMIT):
        limit = _check_limit(limit)
        hits = self.index.search(query, limit)
        return Observation.from_entries(
            Entry(title, leading_sentence(self.docs[title].body)) for title, _ in hits
        )

    def search_titles(self, query, limit):
        """Ranked titles without the per-call cap (used by the recall baseline)"""
        return [title for title, _ in self.index.search(query, limit)]

    def page_fetch(self, title):
        title = one_line(title)
        if not title:
            raise ValueError("page title must not be blank")
        stored = self.docs.get(title) or self.docs.get(self._by_canonical_title.get(canonicalize(title), ''))
        if stored is None:
            return Observation.empty()
        return Observation.from_entries([Entry(stored.title, truncate_at_sentence(stored.body, self.page_chars))])


class MediaWikiBackend:
    """
    Client for the MediaWiki Action API.

    Search uses list=search; page text uses prop=extracts and falls back to the
    search snippet for wikis without the TextExtracts extension.
    """

    def __init__(self, api_url, user_agent, session=None, min_interval=0.1, timeout=10.0,
                 page_chars=DEFAULT_PAGE_CHARS, attempts=3, backoff=0.5, rate_limiter=None):
        if not user_agent:
            raise ValueError("MediaWiki requests need a User-Agent")
        self.api_url = api_url
        self.session = session or build_session(user_agent)
        self.session.headers['User-Agent'] = user_agent
        self.timeout = timeout
        self.page_chars = page_chars
        self.rate_limiter = rate_limiter or RateLimiter(min_interval)
        self._get = retry_on_failure(max_attempts=attempts, backoff=backoff)(self._request)

    @classmethod
    def from_config(cls, wiki_config, session=None):
        return cls(
            api_url=wiki_config.api_url,
            user_agent=wiki_config.user_agent,
            session=session,
            min_interval=wiki_config.min_interval,
            timeout=wiki_config.timeout,
            page_chars=wiki_config.page_chars,
            attempts=wiki_config.attempts,
            backoff=wiki_config.backoff,
        )

    def _request(self, params):
        self.rate_limiter.wait()
        response = self.session.get(self.api_url, params=params, timeout=self.timeout)
        response.raise_for_status()
        return response

    def _query(self, params):
        response = self._get(params)
        try:
            data = response.json()
        except ValueError:
            raise MalformedResponse(f"non-JSON response from {self.api_url}")
        if not isinstance(data, dict):
            raise MalformedResponse("response is not a JSON object")
        if 'error' in data:
            error = data['error']
            raise NetworkError(response.status_code, f"API error {error.get('code')}: {error.get('info')}")
        return data

    def _search(self, query, limit):
        data = self._query({
            'action': 'query',
            'list': 'search',
            'srsearch': query,
            'srlimit': limit,
            'srprop': 'snippet',
            'format': 'json',
        })
        try:
            results = data['query']['search']
            return [Entry(str(item['title']), strip_markup(item.get('snippet', ''))) for item in results]
        except (KeyError, TypeError) as e:
            raise MalformedResponse(f"unexpected search payload: missing {e}")

    def article_search(self, query, limit=MAX_SEARCH_LIMIT):
        limit = _check_limit(limit)
        entries = [entry for entry in self._search(query, limit) if entry.title][:limit]
        logger.debug(f"MediaWiki search {query!r}: {len(entries)} hits")
        return Observation.from_entries(entries)

    def search_titles(self, query, limit):
        return [entry.title for entry in self._search(query, limit) if entry.title]

    def page_fetch(self, title):
        title = one_line(title)
        if not title:
            raise ValueError("page title must not be blank")
        data = self._query({
            'action': 'query',
            'prop': 'extracts',
            'explaintext': 1,
            'exintro': 1,
            'redirects': 1,
            'titles': title,
            'format': 'json',
            'formatversion': 2,
        })
        try:
            pages = data['query']['pages']
        except (KeyError, TypeError):
            raise MalformedResponse("unexpected extracts payload: missing query.pages")
        if not pages or pages[0].get('missing') or pages[0].get('invalid'):
            return Observation.empty()

        page = pages[0]
        resolved_title = page.get('title', title)
        extract = page.get('extract')
        if extract is None:
            logger.warning(f"No extract for {resolved_title!r}; falling back to the search snippet")
            matches = [entry for entry in self._search(resolved_title, 1) if entry.title == resolved_title]
            if not matches:
                return Observation.empty()
            extract = matches[0].snippet
        text = truncate_at_sentence(one_line(extract), self.page_chars)
        if not text:
            return Observation.empty()
        return Observation.from_entries([Entry(resolved_title, text)])


def build_wiki_backend(config, session=None):
    """Backend selected by config.wiki.backend"""
    if config.wiki.backend == 'mediawiki':
        return MediaWikiBackend.from_config(config.wiki, session=session)
    if not config.paths.corpus:
        raise ConfigError("the offline wiki backend needs a corpus file (--corpus)")
    return OfflineCorpusBackend.from_jsonl(config.paths.corpus, page_chars=config.wiki.page_chars)
