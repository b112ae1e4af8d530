"""请求级指标：延迟分位数、步数与错误计数"""

import statistics
import threading
from collections import Counter, deque
from typing import Iterable, Optional


def percentile(values: Iterable[float], q: int) -> float:
    """百分位数（含端点的线性插值），q ∈ [0, 100]；空序列返回 0"""
    data = sorted(values)
    if not data:
        return 0.0
    if len(data) == 1 or q <= 0:
        return float(data[0])
    if q >= 100:
        return float(data[-1])
    return statistics.quantiles(data, n=100, method="inclusive")[q - 1]


def mean(values: Iterable[float]) -> float:
    data = list(values)
    return statistics.fmean(data) if data else 0.0


class QueryMetrics:
    """线程安全的滑动窗口指标"""

    def __init__(self, window: int = 10000):
        self._lock = threading.Lock()
        self._latencies: deque = deque(maxlen=window)
        self._steps: deque = deque(maxlen=window)
        self._errors: Counter = Counter()
        self.queries = 0
        self.last_steps: Optional[int] = None

    def record_query(self, elapsed: float, steps: int) -> None:
        with self._lock:
            self.queries += 1
            self._latencies.append(elapsed)
            self._steps.append(steps)
            self.last_steps = steps

    def record_error(self, code: str) -> None:
        with self._lock:
            self.queries += 1
            self._errors[code] += 1

    def snapshot(self) -> dict:
        with self._lock:
            latencies = list(self._latencies)
            steps = list(self._steps)
            return {
                "queries": self.queries,
                "latency": {
                    "p50": round(percentile(latencies, 50) * 1000, 3),
                    "p95": round(percentile(latencies, 95) * 1000, 3),
                    "mean": round(mean(latencies) * 1000, 3),
                    "unit": "ms",
                },
                "steps": {"last": self.last_steps, "mean": round(mean(steps), 3)},
                "errors": dict(sorted(self._errors.items())),
            }
