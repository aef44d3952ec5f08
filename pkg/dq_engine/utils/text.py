"""
Text helpers shared by the QA base, the BM25 index and aggregation
"""
import re

_WHITESPACE_RE = re.compile(r'\s+')
_TOKEN_RE = re.compile(r'\w+')
_SENTENCE_END_RE = re.compile(r'[.!?。！？](?=\s|$)')


def canonicalize(text):
    """Lowercase, trim and collapse internal whitespace; no stemming"""
    if not text:
        return ''
    return _WHITESPACE_RE.sub(' ', text).strip().lower()


def tokenize(text):
    """Unigram tokens of the canonical form"""
    return _TOKEN_RE.findall(canonicalize(text))


def first_line(text):
    lines = text.splitlines()
    return lines[0] if lines else ''


def one_line(text):
    """Collapse any whitespace run (newlines included) into a single space"""
    return _WHITESPACE_RE.sub(' ', text or '').strip()


def truncate_at_sentence(text, max_chars):
    """
    Leading text of at most max_chars characters ending at a sentence terminator.

    Falls back to a hard cut on the last whitespace when no terminator fits.
    """
    text = (text or '').strip()
    if len(text) <= max_chars:
        return text

    # Scan the full text so a terminator is only accepted when whitespace follows it
    ends = [match.end() for match in _SENTENCE_END_RE.finditer(text) if match.end() <= max_chars]
    if ends:
        return text[:ends[-1]].strip()

    window = text[:max_chars]
    cut = window.rfind(' ')
    return (window[:cut] if cut > 0 else window).strip()


def leading_sentence(text):
    text = one_line(text)
    match = _SENTENCE_END_RE.search(text)
    return text[:match.end()] if match else text
