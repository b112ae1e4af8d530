"""语义缓存

以子提示为粒度缓存 (Key, Value) 对。相似的 Key 归入同一组，命中按相似度选择；
按最近使用时间淘汰，并可按空闲时长(TTL)清理。
"""

import hashlib
import json
import logging
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

from .errors import ConfigError
from .models import CACHE_SERVICE_ID, ServiceResponse, UserContext
from .utils import normalize_text

logger = logging.getLogger(__name__)


def context_fingerprint(ctx: UserContext, keys: Iterable[str] = ()) -> str:
    """对 (角色, 相关上下文值) 计算稳定哈希"""
    relevant = {}
    for key in sorted(set(keys)):
        if key == "user_id":
            relevant[key] = ctx.user_id
        elif key in ctx.attributes:
            relevant[key] = ctx.attributes[key]
    payload = json.dumps({"role": ctx.role, "context": relevant}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CacheKey:
    normalized_text: str
    context_fingerprint: str
    tokens: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        text = normalize_text(self.normalized_text)
        object.__setattr__(self, "normalized_text", text)
        object.__setattr__(self, "tokens", frozenset(text.split()))

    @classmethod
    def build(cls, text: str, ctx: UserContext, keys: Iterable[str] = ()) -> "CacheKey":
        return cls(text, context_fingerprint(ctx, keys))


@dataclass
class CacheEntry:
    key: CacheKey
    value: ServiceResponse
    group_id: CacheKey
    created_at: float
    last_used_at: float
    hit_count: int = 0


@dataclass(frozen=True)
class CachePolicy:
    capacity: int = 1024
    similarity_threshold: float = 0.8
    ttl: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ConfigError(f"缓存容量必须 ≥ 1: {self.capacity!r}")
        if not 0 < self.similarity_threshold <= 1:
            raise ConfigError(f"相似度阈值必须在 (0, 1] 内: {self.similarity_threshold!r}")
        if self.ttl is not None and self.ttl <= 0:
            raise ConfigError(f"ttl 必须为正数: {self.ttl!r}")


def similarity(a: CacheKey, b: CacheKey) -> float:
    """分词集合的 Jaccard 相似度；上下文指纹不同则为 0"""
    if a.context_fingerprint != b.context_fingerprint:
        return 0.0
    if not a.tokens and not b.tokens:
        return 1.0
    union = a.tokens | b.tokens
    return len(a.tokens & b.tokens) / len(union)


class SemanticCache:
    """线程安全的语义KV缓存，每个操作在锁内原子完成"""

    def __init__(self, policy: Optional[CachePolicy] = None, clock: Callable[[], float] = time.monotonic):
        self.policy = policy or CachePolicy()
        self._clock = clock
        self._lock = threading.RLock()
        # 按最近使用顺序排列，队首最久未用
        self._entries: "OrderedDict[CacheKey, CacheEntry]" = OrderedDict()
        self.hits = 0
        self.misses = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._entries)

    def _expired(self, entry: CacheEntry, now: float) -> bool:
        return self.policy.ttl is not None and now - entry.last_used_at > self.policy.ttl

    def _best_match(self, key: CacheKey, now: float) -> tuple[Optional[CacheEntry], float]:
        best, best_score = None, 0.0
        for entry in self._entries.values():
            if self._expired(entry, now):
                continue
            score = similarity(key, entry.key)
            # 从旧到新遍历，>= 使同分时选择最近使用的条目
            if score >= self.policy.similarity_threshold and score >= best_score:
                best, best_score = entry, score
        return best, best_score

    def get(self, key: CacheKey) -> Optional[ServiceResponse]:
        """命中时返回 from_cache=True 的应答，未命中返回 None"""
        with self._lock:
            now = self._clock()
            entry, score = self._best_match(key, now)
            if entry is None:
                self.misses += 1
                logger.debug(f"缓存未命中: {key.normalized_text!r}")
                return None
            entry.hit_count += 1
            entry.last_used_at = max(now, entry.last_used_at)
            self._entries.move_to_end(entry.key)
            self.hits += 1
            logger.debug(f"缓存命中 (相似度={score:.3f}): {key.normalized_text!r}")
            return replace(entry.value, from_cache=True, source_service=CACHE_SERVICE_ID)

    def put(self, key: CacheKey, value: ServiceResponse) -> None:
        with self._lock:
            now = self._clock()
            swept = self._sweep_expired(now)
            if swept:
                self.evictions += swept
                logger.debug(f"缓存清理了 {swept} 个过期条目")
            existing = self._entries.get(key)
            if existing is not None:
                existing.value = value
                existing.last_used_at = max(now, existing.last_used_at)
                self._entries.move_to_end(key)
                return
            similar, _ = self._best_match(key, now)
            group_id = similar.group_id if similar is not None else key
            self._entries[key] = CacheEntry(
                key=key, value=value, group_id=group_id, created_at=now, last_used_at=now,
            )
            if len(self._entries) > self.policy.capacity:
                self.evict()

    def evict(self, sweep_ttl: bool = False) -> int:
        """按最近使用时间从旧到新淘汰直到不超过容量；sweep_ttl 时额外清理空闲超时条目"""
        removed = 0
        with self._lock:
            if sweep_ttl:
                removed += self._sweep_expired(self._clock())
            while len(self._entries) > self.policy.capacity:
                self._entries.popitem(last=False)
                removed += 1
            self.evictions += removed
        if removed:
            logger.debug(f"缓存淘汰了 {removed} 个条目，当前大小 {len(self._entries)}")
        return removed

    def _sweep_expired(self, now: float) -> int:
        if self.policy.ttl is None:
            return 0
        expired = [k for k, e in self._entries.items() if self._expired(e, now)]
        for key in expired:
            del self._entries[key]
        return len(expired)

    def update_policy(self, policy: CachePolicy) -> None:
        with self._lock:
            self.policy = policy
            self.evict()

    def entries(self) -> list[CacheEntry]:
        """条目快照，按最近使用顺序（最旧在前）"""
        with self._lock:
            return [replace(e) for e in self._entries.values()]

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
        logger.info("缓存已清空")

    def stats(self) -> dict:
        with self._lock:
            lookups = self.hits + self.misses
            return {
                "hits": self.hits,
                "misses": self.misses,
                "evictions": self.evictions,
                "size": len(self._entries),
                "capacity": self.policy.capacity,
                "groups": len({e.group_id for e in self._entries.values()}),
                "hit_rate": self.hits / lookups if lookups else 0.0,
            }
