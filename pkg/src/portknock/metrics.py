"""Process-wide instrumentation counters.

Only used to observe what the packet path does (e.g. that it never hashes);
nothing in the protocol logic reads these values.
"""

import threading


class Counter:
    def __init__(self, name):
        self.name = name
        self._value = 0
        self._lock = threading.Lock()

    def incr(self, n=1):
        with self._lock:
            self._value += n

    @property
    def value(self):
        with self._lock:
            return self._value

    def __repr__(self):
        return f"Counter({self.name!r}, {self.value})"


# bumped by every keyed-hash / chaos-hash evaluation
hash_calls = Counter("hash_calls")
