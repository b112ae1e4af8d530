"""基准测试

三个场景在同一组夹具查询上对比：
- baseline: 模拟传统流程，逐个手动调用服务，无缓存、无链式替换、无规则收窄、无结论汇总
- cache: 编排 + 缓存，但检索不经规则收窄（取回规则所指节点类型的全部节点）
- cache_and_rules: 完整流水线
"""

import logging
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import yaml

from .errors import BenchError, ConfigError, RelayError
from .gateway import Gateway
from .metrics import mean
from .models import Prompt, UserContext
from .orchestrator import ExecutionPolicy, StepMode
from .semantic_cache import SemanticCache
from .utils import normalize_text

logger = logging.getLogger(__name__)


class Scenario(str, Enum):
    BASELINE = "baseline"
    CACHE = "cache"
    CACHE_AND_RULES = "cache_and_rules"


@dataclass(frozen=True)
class BenchQuery:
    prompt: str
    context: UserContext
    golden_final_text: str

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], index: int = 0) -> "BenchQuery":
        golden = data.get("golden_final_text")
        if not isinstance(golden, str) or not golden.strip():
            raise BenchError(f"第 {index + 1} 条夹具缺少 golden_final_text", details={"index": index})
        try:
            ctx = data["user_context"]
            return cls(
                prompt=str(data["prompt"]),
                context=UserContext(
                    user_id=str(ctx["user_id"]),
                    role=str(ctx["role"]),
                    attributes=ctx.get("attributes") or {},
                ),
                golden_final_text=golden,
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise BenchError(f"第 {index + 1} 条夹具格式错误: {e}", code="fixture-format-error")


def load_fixtures(path: str) -> list[BenchQuery]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"读取基准夹具失败: {e}", code="io-error")
    except yaml.YAMLError as e:
        raise ConfigError(f"解析基准夹具 {path} 失败: {e}")
    if isinstance(data, Mapping):
        data = data.get("queries")
    if not isinstance(data, list) or not data:
        raise BenchError(f"基准夹具 {path} 没有查询", code="fixture-format-error")
    return [BenchQuery.from_dict(entry, i) for i, entry in enumerate(data)]


def is_accurate(final_text: Optional[str], golden: str) -> bool:
    return final_text is not None and normalize_text(final_text) == normalize_text(golden)


@dataclass(frozen=True)
class RunResult:
    query_index: int
    repetition: int
    elapsed: float
    final_text: Optional[str] = None
    steps: Optional[int] = None
    error_code: Optional[str] = None


@dataclass(frozen=True)
class MetricsReport:
    scenario: Scenario
    queries: int
    repetitions: int
    mean_latency: float
    cold_latency: float
    warm_latency: Optional[float]
    mean_steps: float
    cold_steps: float
    warm_steps: Optional[float]
    accuracy: float
    cache_hit_rate: float
    errors: int

    @property
    def latency_reduction(self) -> Optional[float]:
        """第二次起相对首次运行的延迟下降比例"""
        if self.warm_latency is None or self.cold_latency <= 0:
            return None
        return 1 - self.warm_latency / self.cold_latency

    def to_dict(self) -> dict:
        def _ms(value: Optional[float]) -> Optional[float]:
            return None if value is None else round(value * 1000, 3)

        reduction = self.latency_reduction
        return {
            "scenario": self.scenario.value,
            "queries": self.queries,
            "repetitions": self.repetitions,
            "latency_ms": {
                "mean": _ms(self.mean_latency),
                "cold": _ms(self.cold_latency),
                "warm": _ms(self.warm_latency),
            },
            "latency_reduction": None if reduction is None else round(reduction, 4),
            "steps": {
                "mean": round(self.mean_steps, 3),
                "cold": round(self.cold_steps, 3),
                "warm": None if self.warm_steps is None else round(self.warm_steps, 3),
            },
            "accuracy": round(self.accuracy, 4),
            "cache_hit_rate": round(self.cache_hit_rate, 4),
            "errors": self.errors,
        }


def scenario_policy(gateway: Gateway, scenario: Scenario) -> ExecutionPolicy:
    config = gateway.config
    if scenario is Scenario.BASELINE:
        return config.execution_policy(
            use_cache=False,
            narrow_by_rules=False,
            chaining=False,
            consolidate=False,
            mode=StepMode.BASELINE,
            max_concurrency=1,
        )
    if scenario is Scenario.CACHE:
        return config.execution_policy(narrow_by_rules=False)
    return config.execution_policy()


async def run_bench(
    gateway: Gateway,
    scenario: Scenario,
    queries: Iterable[BenchQuery],
    repetitions: int = 2,
) -> MetricsReport:
    """每个场景使用独立的空缓存，按重复轮次依次运行全部查询"""
    scenario = Scenario(scenario)
    queries = list(queries)
    if repetitions < 1:
        raise BenchError("repetitions 必须 ≥ 1", code="invalid-repetitions")
    policy = scenario_policy(gateway, scenario)
    cache = SemanticCache(gateway.config.cache_policy)
    logger.info(f"开始基准测试: 场景 {scenario.value}, {len(queries)} 条查询 × {repetitions} 轮")

    results: list[RunResult] = []
    for repetition in range(1, repetitions + 1):
        for index, q in enumerate(queries):
            prompt = Prompt(text=q.prompt, context=q.context)
            started = time.perf_counter()
            try:
                response = await gateway.run_prompt(
                    prompt,
                    policy=policy,
                    cache=cache,
                    sequential=scenario is Scenario.BASELINE,
                )
            except RelayError as e:
                logger.debug(f"查询 {index + 1} 第 {repetition} 轮失败: {e.code}")
                results.append(RunResult(index, repetition, time.perf_counter() - started, error_code=e.code))
                continue
            results.append(RunResult(
                index, repetition, time.perf_counter() - started,
                final_text=response.final_text, steps=response.trace.step_count,
            ))

    cold = [r for r in results if r.repetition == 1]
    warm = [r for r in results if r.repetition > 1]
    accurate = sum(1 for r in results if is_accurate(r.final_text, queries[r.query_index].golden_final_text))
    stats = cache.stats()
    lookups = stats["hits"] + stats["misses"]

    def _steps(runs: list[RunResult]) -> float:
        return mean(r.steps for r in runs if r.steps is not None)

    report = MetricsReport(
        scenario=scenario,
        queries=len(queries),
        repetitions=repetitions,
        mean_latency=mean(r.elapsed for r in results),
        cold_latency=mean(r.elapsed for r in cold),
        warm_latency=mean(r.elapsed for r in warm) if warm else None,
        mean_steps=_steps(results),
        cold_steps=_steps(cold),
        warm_steps=_steps(warm) if warm else None,
        accuracy=accurate / len(results) if results else 0.0,
        cache_hit_rate=stats["hits"] / lookups if lookups else 0.0,
        errors=sum(1 for r in results if r.error_code),
    )
    logger.info(f"基准测试完成: {report.to_dict()}")
    return report
