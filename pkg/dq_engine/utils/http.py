"""
HTTP plumbing shared by the remote clients: retry decorator, rate limiter,
session factory and a replaying transport for tests.
"""
import json
import logging
import threading
import time
from functools import wraps
from pathlib import Path

import requests
from requests.adapters import BaseAdapter
from requests.structures import CaseInsensitiveDict

from dq_engine.exceptions import NetworkError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


def retry_on_failure(max_attempts=3, backoff=0.5, error_class=NetworkError, sleep=time.sleep):
    """
    Decorator for API retry logic with exponential backoff.

    Retries connection errors, 429 and 5xx responses; the wrapped call must
    raise requests exceptions (use response.raise_for_status()). After the last
    attempt the failure is raised as error_class(status, message).
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            for attempt in range(max_attempts):
                last_attempt = attempt == max_attempts - 1
                wait_time = backoff * (2 ** attempt)
                try:
                    return func(*args, **kwargs)
                except requests.exceptions.HTTPError as e:
                    status = e.response.status_code if e.response is not None else None
                    if status in RETRYABLE_STATUS and not last_attempt:
                        logger.warning(f"HTTP {status} from {func.__name__}. Retrying in {wait_time}s "
                                       f"({attempt + 1}/{max_attempts})")
                        sleep(wait_time)
                        continue
                    raise error_class(status, f"HTTP {status} after {attempt + 1} attempt(s)")
                except requests.exceptions.RequestException as e:
                    if not last_attempt:
                        logger.warning(f"Request failed: {str(e)}. Retrying in {wait_time}s")
                        sleep(wait_time)
                        continue
                    raise error_class(None, f"Request failed after {max_attempts} attempts: {str(e)}")
            return None
        return wrapper
    return decorator


class RateLimiter:
    """Minimum spacing between calls, shared by every thread using the client"""

    def __init__(self, min_interval=0.1, clock=time.monotonic, sleep=time.sleep):
        self.min_interval = min_interval
        self.clock = clock
        self.sleep = sleep
        self.last_request_time = None
        self._lock = threading.Lock()

    def wait(self):
        with self._lock:
            now = self.clock()
            if self.last_request_time is not None:
                time_since_last = now - self.last_request_time
                if time_since_last < self.min_interval:
                    self.sleep(self.min_interval - time_since_last)
                    now = self.clock()
            self.last_request_time = now


def build_session(user_agent=None, adapter=None):
    session = requests.Session()
    if user_agent:
        session.headers['User-Agent'] = user_agent
    session.headers['Accept'] = 'application/json'
    if adapter is not None:
        session.mount('http://', adapter)
        session.mount('https://', adapter)
    return session


class RecordedResponseAdapter(BaseAdapter):
    """
    Transport adapter that answers from canned responses instead of the network.

    Responses are consumed in order; each is (status, body) where body is a dict
    (sent as JSON) or a string. Every PreparedRequest is kept in `requests`.
    """

    def __init__(self, responses):
        super().__init__()
        self.responses = list(responses)
        self.requests = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path):
        """Fixture file: JSON list of {"status": int, "body": ...}"""
        with Path(path).open(encoding='utf-8') as f:
            recorded = json.load(f)
        return cls([(item.get('status', 200), item['body']) for item in recorded])

    def send(self, request, **kwargs):
        with self._lock:
            self.requests.append(request)
            if not self.responses:
                raise requests.exceptions.ConnectionError("no recorded response left")
            status, body = self.responses.pop(0)

        response = requests.Response()
        response.status_code = status
        response.reason = 'OK' if status < 400 else 'Error'
        response.url = request.url
        response.request = request
        if isinstance(body, (dict, list)):
            payload = json.dumps(body).encode('utf-8')
            response.headers = CaseInsensitiveDict({'Content-Type': 'application/json'})
        else:
            payload = str(body).encode('utf-8')
            response.headers = CaseInsensitiveDict({'Content-Type': 'text/plain'})
        response._content = payload
        response.encoding = 'utf-8'
        return response

    def close(self):
        pass

    @property
    def request_bodies(self):
        return [json.loads(request.body) if request.body else None for request in self.requests]
