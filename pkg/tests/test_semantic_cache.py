"""语义缓存测试"""

import random
import threading

import pytest

from src.errors import ConfigError
from src.models import CACHE_SERVICE_ID, ServiceResponse, UserContext
from src.semantic_cache import CacheKey, CachePolicy, SemanticCache, context_fingerprint, similarity


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def _ctx(user_id="XXX", account_type="saving"):
    return UserContext(user_id, "retail-customer", {"account-type": account_type})


def _response(text="R", sub_id=1):
    return ServiceResponse(sub_id, text, {"fact": text}, source_service="svc", elapsed=0.05)


class TestKeys:
    """缓存键与相似度"""

    def test_key_is_normalized(self):
        key = CacheKey("  Fetch Customer, Banking summary! ", "fp")
        assert key.normalized_text == "fetch customer banking summary"
        assert key == CacheKey("fetch customer banking summary", "fp")

    def test_fingerprint_uses_only_relevant_keys(self):
        a = UserContext("XXX", "retail-customer", {"account-type": "saving", "branch": "north"})
        b = UserContext("YYY", "retail-customer", {"account-type": "saving", "branch": "south"})
        assert context_fingerprint(a, ["account-type"]) == context_fingerprint(b, ["account-type"])
        assert context_fingerprint(a, ["branch"]) != context_fingerprint(b, ["branch"])
        assert context_fingerprint(a, ["user_id"]) != context_fingerprint(b, ["user_id"])

    def test_fingerprint_includes_role(self):
        a = UserContext("XXX", "retail-customer")
        b = UserContext("XXX", "corporate-customer")
        assert context_fingerprint(a) != context_fingerprint(b)

    def test_similarity_properties(self):
        """随机键对：对称、范围在 [0,1]、自身相似度为 1、指纹不同为 0"""
        rng = random.Random(42)
        words = ["fd", "rate", "balance", "fee", "limit", "saving", "account", "transfer", "policy"]
        for _ in range(1000):
            a = CacheKey(" ".join(rng.choices(words, k=rng.randint(0, 6))), rng.choice(["f1", "f2"]))
            b = CacheKey(" ".join(rng.choices(words, k=rng.randint(0, 6))), rng.choice(["f1", "f2"]))
            s = similarity(a, b)
            assert 0.0 <= s <= 1.0
            assert s == similarity(b, a)
            assert similarity(a, a) == 1.0
            if a.context_fingerprint != b.context_fingerprint:
                assert s == 0.0

    def test_jaccard(self):
        a = CacheKey("a b c d", "fp")
        b = CacheKey("a b c e", "fp")
        assert similarity(a, b) == pytest.approx(3 / 5)


class TestPolicy:
    @pytest.mark.parametrize("kwargs", [
        {"capacity": 0}, {"similarity_threshold": 0}, {"similarity_threshold": 1.5}, {"ttl": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            CachePolicy(**kwargs)


class TestSemanticCache:
    """缓存行为"""

    def test_empty_cache_misses(self):
        cache = SemanticCache()
        assert cache.get(CacheKey.build("anything", _ctx())) is None
        assert cache.stats()["misses"] == 1

    def test_hit_is_marked_as_cached(self):
        cache = SemanticCache()
        key = CacheKey.build("Fetch Customer Banking summary", _ctx(), ["user_id"])
        cache.put(key, _response("Customer XXX"))

        hit = cache.get(CacheKey.build("fetch customer banking summary", _ctx(), ["user_id"]))
        assert hit is not None
        assert hit.from_cache
        assert hit.source_service == CACHE_SERVICE_ID
        assert hit.text == "Customer XXX"
        assert dict(hit.facts) == {"fact": "Customer XXX"}

    def test_context_isolation(self):
        cache = SemanticCache()
        cache.put(CacheKey.build("Fetch Customer Banking summary", _ctx("XXX"), ["user_id"]), _response())
        assert cache.get(CacheKey.build("Fetch Customer Banking summary", _ctx("YYY"), ["user_id"])) is None

    def test_similar_text_hits(self):
        cache = SemanticCache(CachePolicy(similarity_threshold=0.8))
        cache.put(CacheKey("what are the active fd offered and its details", "fp"), _response("R2"))
        # 6/9 低于阈值，9/10 高于阈值
        assert cache.get(CacheKey("what are the active fd offered", "fp")) is None
        assert cache.get(CacheKey("what are the active fd offered and its details please", "fp")) is not None

    def test_best_match_and_tie_break(self):
        cache = SemanticCache(CachePolicy(similarity_threshold=0.5))
        cache.put(CacheKey("a b c", "fp"), _response("old"))
        cache.put(CacheKey("a b d", "fp"), _response("new"))
        # 与两者相似度相同时取最近使用的
        assert cache.get(CacheKey("a b", "fp")).text == "new"
        # 完全相同优先
        assert cache.get(CacheKey("a b c", "fp")).text == "old"

    def test_similar_keys_share_group(self):
        cache = SemanticCache(CachePolicy(similarity_threshold=0.5))
        cache.put(CacheKey("a b c", "fp"), _response("1"))
        cache.put(CacheKey("a b d", "fp"), _response("2"))
        cache.put(CacheKey("x y z", "fp"), _response("3"))
        groups = {e.key.normalized_text: e.group_id.normalized_text for e in cache.entries()}
        assert groups == {"a b c": "a b c", "a b d": "a b c", "x y z": "x y z"}
        assert cache.stats()["groups"] == 2

    def test_put_same_key_updates(self):
        cache = SemanticCache()
        key = CacheKey("a b", "fp")
        cache.put(key, _response("1"))
        cache.put(key, _response("2"))
        assert len(cache) == 1
        assert cache.get(key).text == "2"

    def test_lru_eviction(self):
        cache = SemanticCache(CachePolicy(capacity=2))
        a, b, c = CacheKey("alpha", "fp"), CacheKey("beta", "fp"), CacheKey("gamma", "fp")
        cache.put(a, _response("a"))
        cache.put(b, _response("b"))
        cache.get(a)  # a 变为最近使用
        cache.put(c, _response("c"))

        assert cache.get(b) is None
        assert cache.get(a) is not None
        assert cache.get(c) is not None
        assert cache.stats()["evictions"] == 1

    def test_ttl(self):
        clock = FakeClock()
        cache = SemanticCache(CachePolicy(ttl=10), clock=clock)
        key = CacheKey("alpha", "fp")
        cache.put(key, _response())
        clock.now = 9
        assert cache.get(key) is not None  # 命中刷新空闲时间
        clock.now = 18
        assert cache.get(key) is not None
        clock.now = 29
        assert cache.get(key) is None
        assert cache.evict(sweep_ttl=True) == 1
        assert len(cache) == 0

    def test_put_drops_expired_entries(self):
        """写入时先清理过期条目，统计不再包含它们"""
        clock = FakeClock()
        cache = SemanticCache(CachePolicy(capacity=10, ttl=10), clock=clock)
        for word in ["alpha", "bravo", "charlie", "delta", "echo"]:
            cache.put(CacheKey(word, "fp"), _response(word))
        assert cache.stats()["size"] == 5

        clock.now = 100
        cache.put(CacheKey("foxtrot", "fp"), _response("foxtrot"))

        stats = cache.stats()
        assert stats["size"] == 1
        assert stats["groups"] == 1
        assert stats["evictions"] == 5
        assert [e.key.normalized_text for e in cache.entries()] == ["foxtrot"]

    def test_put_keeps_live_entries(self):
        clock = FakeClock()
        cache = SemanticCache(CachePolicy(capacity=10, ttl=10), clock=clock)
        cache.put(CacheKey("alpha", "fp"), _response("alpha"))
        clock.now = 5
        cache.put(CacheKey("bravo", "fp"), _response("bravo"))
        clock.now = 12
        cache.put(CacheKey("charlie", "fp"), _response("charlie"))
        assert [e.key.normalized_text for e in cache.entries()] == ["bravo", "charlie"]
        assert cache.stats()["evictions"] == 1

    def test_hit_count(self):
        cache = SemanticCache()
        key = CacheKey("alpha", "fp")
        cache.put(key, _response())
        for _ in range(3):
            cache.get(key)
        assert cache.entries()[0].hit_count == 3
        assert cache.stats()["hit_rate"] == 1.0

    def test_update_policy_shrinks(self):
        cache = SemanticCache(CachePolicy(capacity=4))
        for word in ["a", "b", "c", "d"]:
            cache.put(CacheKey(word, "fp"), _response(word))
        cache.update_policy(CachePolicy(capacity=2))
        assert [e.key.normalized_text for e in cache.entries()] == ["c", "d"]

    def test_clear(self):
        cache = SemanticCache()
        cache.put(CacheKey("a", "fp"), _response())
        cache.clear()
        assert len(cache) == 0

    def test_concurrent_access(self):
        cache = SemanticCache(CachePolicy(capacity=50))
        errors = []

        def worker(seed: int):
            rng = random.Random(seed)
            try:
                for _ in range(500):
                    key = CacheKey(f"word{rng.randint(0, 80)}", "fp")
                    if rng.random() < 0.5:
                        cache.put(key, _response(key.normalized_text))
                    else:
                        hit = cache.get(key)
                        assert hit is None or hit.text == key.normalized_text
            except Exception as e:  # pragma: no cover
                errors.append(e)

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []
        assert len(cache) <= 50


class ReferenceCache:
    """列表实现的参照模型（最旧在前）"""

    def __init__(self, capacity: int, threshold: float):
        self.capacity = capacity
        self.threshold = threshold
        self.items: list[tuple[CacheKey, str]] = []

    def _find(self, key: CacheKey):
        best, best_score = None, 0.0
        for index, (k, _) in enumerate(self.items):
            score = similarity(key, k)
            if score >= self.threshold and score >= best_score:
                best, best_score = index, score
        return best

    def get(self, key: CacheKey):
        index = self._find(key)
        if index is None:
            return None
        item = self.items.pop(index)
        self.items.append(item)
        return item[1]

    def put(self, key: CacheKey, value: str):
        for index, (k, _) in enumerate(self.items):
            if k == key:
                self.items.pop(index)
                break
        self.items.append((key, value))
        while len(self.items) > self.capacity:
            self.items.pop(0)


class TestReferenceModel:
    def test_random_operations(self):
        """10000 次随机操作与参照模型一致"""
        rng = random.Random(1234)
        vocab = ["fd", "rate", "balance", "fee", "limit", "saving", "transfer"]
        cache = SemanticCache(CachePolicy(capacity=16, similarity_threshold=0.6))
        model = ReferenceCache(16, 0.6)
        for step in range(10000):
            key = CacheKey(" ".join(rng.sample(vocab, rng.randint(1, 4))), rng.choice(["f1", "f2"]))
            if rng.random() < 0.4:
                value = f"v{step}"
                cache.put(key, _response(value))
                model.put(key, value)
            else:
                hit = cache.get(key)
                expected = model.get(key)
                assert (hit.text if hit is not None else None) == expected
            assert len(cache) == len(model.items) <= 16
        assert [e.key for e in cache.entries()] == [k for k, _ in model.items]
