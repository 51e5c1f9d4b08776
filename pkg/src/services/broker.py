"""
Topic-based publish-subscribe broker with MQTT-style topic trees.

'+' matches exactly one level, '#' (last level only) matches the remaining
suffix, including none: "a/#" matches "a".
"""

import logging
from collections import deque
from typing import Callable, Deque, Dict, List, NamedTuple, Optional, Set, Tuple

from config.settings import TOPIC_SETTINGS
from src.utils.errors import TopicError

logger = logging.getLogger(__name__)

SINGLE = '+'
MULTI = '#'
SEPARATOR = '/'

Handler = Callable[[str, bytes], None]


class TopicName(NamedTuple):
    levels: Tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> 'TopicName':
        if not text:
            raise TopicError("Topic name cannot be empty")
        levels = tuple(text.split(SEPARATOR))
        for level in levels:
            if not level:
                raise TopicError(f"Empty level in topic {text!r}")
            if SINGLE in level or MULTI in level:
                raise TopicError(f"Wildcards are not allowed in topic names: {text!r}")
        return cls(levels)

    def __str__(self):
        return SEPARATOR.join(self.levels)


class TopicFilter(NamedTuple):
    levels: Tuple[str, ...]

    @classmethod
    def parse(cls, text: str) -> 'TopicFilter':
        if not text:
            raise TopicError("Topic filter cannot be empty")
        levels = tuple(text.split(SEPARATOR))
        for i, level in enumerate(levels):
            if not level:
                raise TopicError(f"Empty level in filter {text!r}")
            if level == MULTI:
                if i != len(levels) - 1:
                    raise TopicError(f"'#' must be the last level: {text!r}")
            elif level != SINGLE and (SINGLE in level or MULTI in level):
                raise TopicError(f"Wildcards must occupy a whole level: {text!r}")
        return cls(levels)

    @property
    def is_literal(self) -> bool:
        return not any(level in (SINGLE, MULTI) for level in self.levels)

    def __str__(self):
        return SEPARATOR.join(self.levels)


def topic_matches(topic_filter: TopicFilter, topic: TopicName) -> bool:
    """Level-by-level wildcard match"""
    f, t = topic_filter.levels, topic.levels
    for i, level in enumerate(f):
        if level == MULTI:
            return True
        if i >= len(t):
            return False
        if level != SINGLE and level != t[i]:
            return False
    return len(f) == len(t)


class Subscription(NamedTuple):
    subscriber: str
    topic_filter: TopicFilter


class _Node:
    __slots__ = ('children', 'subscribers')

    def __init__(self):
        self.children: Dict[str, '_Node'] = {}
        self.subscribers: Set[str] = set()


class Broker:
    """Subscriptions indexed by filter level; at-most-once delivery.

    Subscribers without a handler collect messages in a bounded inbox that
    keeps the newest inbox_capacity entries until drained.
    """

    def __init__(self, inbox_capacity: int = TOPIC_SETTINGS['inbox_capacity']):
        if inbox_capacity <= 0:
            raise ValueError("inbox_capacity must be positive")

        self._root = _Node()
        self._subscriptions: Set[Subscription] = set()
        self._handlers: Dict[str, Optional[Handler]] = {}
        self.inboxes: Dict[str, Deque[Tuple[str, bytes]]] = {}
        self.inbox_capacity = inbox_capacity
        self.published = 0


    def subscribe(self, subscriber: str, topic_filter: str, handler: Optional[Handler] = None) -> bool:
        """False if the (subscriber, filter) pair already exists"""
        parsed = TopicFilter.parse(topic_filter)
        subscription = Subscription(subscriber, parsed)
        if handler is not None or subscriber not in self._handlers:
            self._handlers[subscriber] = handler
        self.inboxes.setdefault(subscriber, deque(maxlen=self.inbox_capacity))
        if subscription in self._subscriptions:
            return False

        node = self._root
        for level in parsed.levels:
            node = node.children.setdefault(level, _Node())
        node.subscribers.add(subscriber)
        self._subscriptions.add(subscription)
        logger.debug("%s subscribed to %s", subscriber, parsed)
        return True


    def unsubscribe(self, subscriber: str, topic_filter: str) -> bool:
        parsed = TopicFilter.parse(topic_filter)
        subscription = Subscription(subscriber, parsed)
        if subscription not in self._subscriptions:
            return False
        self._subscriptions.remove(subscription)

        path = [self._root]
        for level in parsed.levels:
            path.append(path[-1].children[level])
        path[-1].subscribers.discard(subscriber)
        for parent, level, node in reversed(list(zip(path, parsed.levels, path[1:]))):
            if node.subscribers or node.children:
                break
            del parent.children[level]
        return True


    def subscriptions(self, subscriber: Optional[str] = None) -> List[Subscription]:
        subs = (s for s in self._subscriptions if subscriber is None or s.subscriber == subscriber)
        return sorted(subs, key=lambda s: (s.subscriber, str(s.topic_filter)))


    def matching_subscribers(self, topic: TopicName) -> Set[str]:
        found: Set[str] = set()
        self._collect(self._root, topic.levels, 0, found)
        return found


    def _collect(self, node: _Node, levels: Tuple[str, ...], i: int, found: Set[str]):
        multi = node.children.get(MULTI)
        if multi is not None:
            found.update(multi.subscribers)
        if i == len(levels):
            found.update(node.subscribers)
            return
        for key in (levels[i], SINGLE):
            child = node.children.get(key)
            if child is not None:
                self._collect(child, levels, i + 1, found)


    def publish(self, topic: str, payload: bytes) -> int:
        """Deliver once to every subscriber with a matching filter; returns the delivery count"""
        name = TopicName.parse(topic)
        self.published += 1
        # registration order
        found = self.matching_subscribers(name)
        targets = [s for s in self._handlers if s in found]
        for subscriber in targets:
            handler = self._handlers[subscriber]
            if handler is None:
                self.inboxes[subscriber].append((topic, payload))
            else:
                handler(topic, payload)
        logger.debug("published %s to %d subscribers", topic, len(targets))
        return len(targets)


    def drain(self, subscriber: str) -> List[Tuple[str, bytes]]:
        """Pending (topic, payload) pairs for subscriber, oldest first; empties the inbox"""
        inbox = self.inboxes.get(subscriber)
        if inbox is None:
            return []
        pending = list(inbox)
        inbox.clear()
        return pending


    def __repr__(self):
        return f"Broker({len(self._subscriptions)} subscriptions, {len(self._handlers)} subscribers)"
