"""编排引擎

把子提示按依赖分层（阶段间串行、阶段内并行），在执行时完成提示-应答链式替换，
查询语义缓存，检索知识图谱并调用AI服务，最后汇总成一个回答。
"""

import asyncio
import logging
import operator
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from graphlib import TopologicalSorter
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Optional

from .ai_services import ServiceRegistry
from .errors import (
    AggregationError,
    ConfigError,
    ExecutionError,
    ModelValidationError,
    PlanError,
    ServiceUnavailableError,
)
from .graph_store import GraphRegistry, query
from .models import AggregateResponse, ServiceResponse, SubPrompt, UserContext, check_decomposition
from .rule_engine import Rule, RuleSet, bind, bind_whole_domain, match_rule
from .semantic_cache import CacheKey, SemanticCache
from .utils import CHAIN_PLACEHOLDER, call_with_retry, render_template

logger = logging.getLogger(__name__)


class StepMode(str, Enum):
    BASELINE = "baseline"
    ORCHESTRATED = "orchestrated"


# ---------------------------------------------------------------- 计划


@dataclass(frozen=True)
class PlanBinding:
    """子提示的规则与目标服务；查询模板在执行时才绑定（链式事实此时才可用）"""

    sub_prompt_id: int
    rule: Rule
    service_id: str


@dataclass(frozen=True)
class ExecutionPlan:
    stages: tuple
    bindings: Mapping[int, PlanBinding]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(frozenset(s) for s in self.stages))
        object.__setattr__(self, "bindings", MappingProxyType(dict(self.bindings)))

    def stage_of(self, sub_prompt_id: int) -> int:
        """所在阶段（从1开始）"""
        for index, stage in enumerate(self.stages, 1):
            if sub_prompt_id in stage:
                return index
        raise KeyError(sub_prompt_id)

    def sequential(self) -> "ExecutionPlan":
        """每个子提示单独成一个阶段，按ID顺序（逐个手动调用的流程）"""
        ids = sorted(i for stage in self.stages for i in stage)
        return ExecutionPlan(stages=tuple(frozenset([i]) for i in ids), bindings=self.bindings)

    def to_dict(self) -> dict:
        return {
            "stages": [sorted(stage) for stage in self.stages],
            "bindings": {
                str(i): {"rule_id": b.rule.rule_id, "target_kg": b.rule.target_kg, "service_id": b.service_id}
                for i, b in sorted(self.bindings.items())
            },
        }


def layer_stages(subs: Iterable[SubPrompt]) -> tuple:
    """最长路径分层：每个子提示放在依赖允许的最早阶段"""
    subs = list(subs)
    depth: dict[int, int] = {}
    deps = {s.id: s.depends_on for s in subs}
    for sub_id in TopologicalSorter(deps).static_order():
        depth[sub_id] = 1 + max((depth[d] for d in deps[sub_id]), default=-1)
    stages: list[set] = [set() for _ in range(max(depth.values(), default=-1) + 1)]
    for sub_id, d in depth.items():
        stages[d].add(sub_id)
    return tuple(frozenset(s) for s in stages)


def plan(
    subs: Iterable[SubPrompt],
    ctx: UserContext,
    rules: RuleSet,
    services: ServiceRegistry,
) -> ExecutionPlan:
    try:
        ordered = check_decomposition(subs)
    except ModelValidationError as e:
        raise PlanError(e.message, code=e.code)
    bindings = {}
    for sub in ordered:
        rule = match_rule(sub, ctx, rules)
        service = services.for_domain(sub.target_domain)
        bindings[sub.id] = PlanBinding(sub_prompt_id=sub.id, rule=rule, service_id=service.service_id)
    result = ExecutionPlan(stages=layer_stages(ordered), bindings=bindings)
    logger.debug(f"执行计划: {result.to_dict()['stages']}")
    return result


# ---------------------------------------------------------------- 追踪与步数


@dataclass(frozen=True)
class TraceRecord:
    sub_prompt_id: int
    stage: int
    cache_hit: bool
    kg_queries: int
    service_invocations: int
    elapsed: float = 0.0
    rule_id: str = ""
    service_id: str = ""

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "sub_prompt_id": self.sub_prompt_id,
            "stage": self.stage,
            "cache_hit": self.cache_hit,
            "kg_queries": self.kg_queries,
            "service_invocations": self.service_invocations,
            "rule_id": self.rule_id,
            "service_id": self.service_id,
        }
        if include_timing:
            data["elapsed_ms"] = round(self.elapsed * 1000, 3)
        return data


@dataclass(frozen=True)
class ExecutionTrace:
    records: tuple
    step_count: int = 0
    total_elapsed: float = 0.0
    mode: StepMode = StepMode.ORCHESTRATED

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.sub_prompt_id)))

    @property
    def service_invocations(self) -> int:
        return sum(r.service_invocations for r in self.records)

    @property
    def kg_queries(self) -> int:
        return sum(r.kg_queries for r in self.records)

    @property
    def cache_hits(self) -> int:
        return sum(1 for r in self.records if r.cache_hit)

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "mode": self.mode.value,
            "step_count": self.step_count,
            "records": [r.to_dict(include_timing) for r in self.records],
        }
        if include_timing:
            data["total_elapsed_ms"] = round(self.total_elapsed * 1000, 3)
        return data


@dataclass(frozen=True)
class StepCounting:
    """步数统计参数

    编排模式: plan_steps + 有实际检索/调用的阶段数 + (存在纯缓存阶段时 cache_replay_steps)
    + aggregate_steps；总数超过 merge_bookkeeping_above 时，计划与汇总合并为一步。
    基线模式: 每个子提示 选择服务 + 调用 两步，外加一步人工关联。
    """

    plan_steps: int = 1
    aggregate_steps: int = 1
    cache_replay_steps: int = 1
    merge_bookkeeping_above: Optional[int] = 4

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "StepCounting":
        data = data or {}
        try:
            return cls(
                plan_steps=int(data.get("plan_steps", 1)),
                aggregate_steps=int(data.get("aggregate_steps", 1)),
                cache_replay_steps=int(data.get("cache_replay_steps", 1)),
                merge_bookkeeping_above=(
                    None if data.get("merge_bookkeeping_above", 4) is None
                    else int(data.get("merge_bookkeeping_above", 4))
                ),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"step_counting 配置错误: {e}")

    def to_dict(self) -> dict:
        return {
            "plan_steps": self.plan_steps,
            "aggregate_steps": self.aggregate_steps,
            "cache_replay_steps": self.cache_replay_steps,
            "merge_bookkeeping_above": self.merge_bookkeeping_above,
        }


def count_steps(trace: ExecutionTrace, mode: StepMode, counting: Optional[StepCounting] = None) -> int:
    counting = counting or StepCounting()
    if StepMode(mode) is StepMode.BASELINE:
        return 2 * len(trace.records) + 1

    stages: dict[int, list[TraceRecord]] = {}
    for record in trace.records:
        stages.setdefault(record.stage, []).append(record)
    active = sum(
        1 for records in stages.values()
        if any(r.kg_queries or r.service_invocations for r in records)
    )
    replayed = len(stages) - active
    bookkeeping = counting.plan_steps + counting.aggregate_steps
    steps = bookkeeping + active + (counting.cache_replay_steps if replayed else 0)
    if counting.merge_bookkeeping_above is not None and steps > counting.merge_bookkeeping_above:
        steps = steps - bookkeeping + 1
    return steps


# ---------------------------------------------------------------- 汇总


_COMPARATORS: Mapping[str, Callable[[Any, Any], bool]] = {
    "gte": operator.ge,
    "gt": operator.gt,
    "lte": operator.le,
    "lt": operator.lt,
    "eq": operator.eq,
    "ne": operator.ne,
}


@dataclass(frozen=True)
class DerivedFact:
    """由两个事实（或事实与常量）比较得出的派生事实"""

    name: str
    left: str
    op: str
    right: Any
    then: str
    otherwise: str

    def __post_init__(self):
        if self.op not in _COMPARATORS:
            raise ConfigError(f"派生事实 {self.name} 的运算符未知: {self.op}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DerivedFact":
        try:
            condition = data["if"]
            return cls(
                name=str(data["name"]),
                left=str(condition["left"]),
                op=str(condition["op"]),
                right=condition["right"],
                then=str(data["then"]),
                otherwise=str(data["else"]),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"派生事实定义格式错误: {data!r} ({e})")

    def evaluate(self, facts: Mapping[str, Any]) -> str:
        if self.left not in facts:
            raise AggregationError(
                f"派生事实 {self.name} 缺少事实 {self.left}",
                details={"missing": self.left},
            )
        right = self.right
        if isinstance(right, str):
            if right not in facts:
                raise AggregationError(
                    f"派生事实 {self.name} 缺少事实 {right}",
                    details={"missing": right},
                )
            right = facts[right]
        try:
            result = _COMPARATORS[self.op](facts[self.left], right)
        except TypeError:
            raise AggregationError(
                f"派生事实 {self.name} 无法比较 {facts[self.left]!r} 与 {right!r}",
                code="derive-type-error",
            )
        return self.then if result else self.otherwise


@dataclass(frozen=True)
class ConclusionTemplate:
    intents: frozenset
    template: str
    derive: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "intents", frozenset(self.intents))
        object.__setattr__(self, "derive", tuple(self.derive))
        if not self.intents:
            raise ConfigError("结论模板必须声明适用的意图集合")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConclusionTemplate":
        try:
            return cls(
                intents=frozenset(str(i) for i in data["intents"]),
                template=str(data.get("template") or ""),
                derive=tuple(DerivedFact.from_dict(d) for d in data.get("derive") or ()),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"结论模板定义格式错误: {data!r} ({e})")

    def render(self, facts: Mapping[str, Any]) -> str:
        values = dict(facts)
        for derived in self.derive:
            values[derived.name] = derived.evaluate(values)
        try:
            return render_template(self.template, values)
        except KeyError as e:
            raise AggregationError(
                f"结论模板缺少事实 {e.args[0]}",
                details={"missing": e.args[0], "intents": sorted(self.intents)},
            )


def select_conclusion(conclusions: Iterable[ConclusionTemplate], intents: Iterable[str]) -> Optional[ConclusionTemplate]:
    """选择意图集合与分解结果完全一致的结论模板"""
    wanted = frozenset(intents)
    return next((c for c in conclusions if c.intents == wanted), None)


def _sentence(text: str) -> str:
    text = text.strip()
    return text if text.endswith((".", "!", "?")) else f"{text}."


def aggregate(
    parts: Iterable[ServiceResponse],
    subs: Iterable[SubPrompt],
    conclusion: Optional[ConclusionTemplate] = None,
) -> str:
    """按子提示ID（即依赖顺序）拼接各部分，再追加结论"""
    ordered = sorted(parts, key=lambda p: p.sub_prompt_id)
    expected = sorted(s.id for s in subs)
    if [p.sub_prompt_id for p in ordered] != expected:
        raise AggregationError(
            f"应答与子提示不一一对应: {[p.sub_prompt_id for p in ordered]} != {expected}",
            code="missing-part",
        )
    sentences = [_sentence(p.text) for p in ordered]
    if conclusion is not None and conclusion.template.strip():
        merged: dict[str, Any] = {}
        for part in ordered:
            merged.update(part.facts)
        sentences.append(conclusion.render(merged).strip())
    return " ".join(sentences)


# ---------------------------------------------------------------- 执行


@dataclass(frozen=True)
class ExecutionPolicy:
    max_concurrency: Optional[int] = None  # None 表示阶段大小
    service_retries: int = 1
    retry_base_delay: float = 0.0
    use_cache: bool = True
    narrow_by_rules: bool = True
    chaining: bool = True
    consolidate: bool = True
    mode: StepMode = StepMode.ORCHESTRATED
    step_counting: StepCounting = field(default_factory=StepCounting)
    conclusions: tuple = ()

    def __post_init__(self):
        if self.max_concurrency is not None and self.max_concurrency < 1:
            raise ConfigError(f"max_concurrency 必须 ≥ 1: {self.max_concurrency}")
        if self.service_retries < 0:
            raise ConfigError(f"service_retries 不能为负: {self.service_retries}")


def chain_text(sub: SubPrompt, responses: Mapping[int, ServiceResponse]) -> str:
    """把 {R<k>} 替换为依赖子提示的应答文本"""
    return CHAIN_PLACEHOLDER.sub(lambda m: responses[int(m.group(1))].text, sub.text_template)


def prior_facts(sub: SubPrompt, responses: Mapping[int, ServiceResponse]) -> dict:
    """直接依赖的事实，按ID顺序合并"""
    facts: dict[str, Any] = {}
    for dep in sorted(sub.depends_on):
        facts.update(responses[dep].facts)
    return facts


class _Run:
    """一次 execute 调用的可变状态"""

    def __init__(self, plan_, ctx, cache, kg_registry, services, policy):
        self.plan = plan_
        self.ctx = ctx
        self.cache = cache if policy.use_cache else None
        self.kg_registry = kg_registry
        self.services = services
        self.policy = policy
        self.responses: dict[int, ServiceResponse] = {}
        self.records: dict[int, TraceRecord] = {}
        self.pending_puts: list[tuple[CacheKey, ServiceResponse]] = []

    async def run_sub(self, sub: SubPrompt, stage: int) -> tuple[ServiceResponse, TraceRecord, Optional[CacheKey]]:
        started = time.perf_counter()
        binding = self.plan.bindings[sub.id]
        rule = binding.rule
        if self.policy.chaining:
            text = chain_text(sub, self.responses)
            facts = prior_facts(sub, self.responses)
        else:
            text = CHAIN_PLACEHOLDER.sub("", sub.text_template).strip()
            facts = {}

        key = None
        if self.cache is not None:
            key = CacheKey.build(text, self.ctx, rule.context_keys())
            cached = self.cache.get(key)
            if cached is not None:
                elapsed = time.perf_counter() - started
                record = TraceRecord(
                    sub.id, stage, True, 0, 0, elapsed, rule.rule_id, cached.source_service,
                )
                return replace(cached, sub_prompt_id=sub.id, elapsed=elapsed), record, None

        if self.policy.narrow_by_rules:
            rule_binding = bind(rule, sub, self.ctx, facts)
        else:
            rule_binding = bind_whole_domain(rule, sub)
        bundle = query(self.kg_registry.get(rule.target_kg), rule_binding.resolved_query, sub.id)

        service = self.services.get(binding.service_id)
        invocations = 0

        def _count(_attempt: int) -> None:
            nonlocal invocations
            invocations += 1

        response = await call_with_retry(
            lambda: service.invoke(text, bundle, intent=sub.intent),
            retries=self.policy.service_retries,
            base_delay=self.policy.retry_base_delay,
            exceptions=(ServiceUnavailableError,),
            on_attempt=_count,
        )
        elapsed = time.perf_counter() - started
        record = TraceRecord(sub.id, stage, False, 1, invocations, elapsed, rule.rule_id, service.service_id)
        return replace(response, sub_prompt_id=sub.id, elapsed=elapsed), record, key

    async def run_stage(self, stage: int, subs: list[SubPrompt]) -> None:
        limit = self.policy.max_concurrency or len(subs)
        semaphore = asyncio.Semaphore(limit)

        async def _guarded(sub: SubPrompt):
            async with semaphore:
                return await self.run_sub(sub, stage)

        logger.debug(f"开始第 {stage} 阶段: {[f'P{s.id}' for s in subs]}")
        results = await asyncio.gather(*(_guarded(s) for s in subs), return_exceptions=True)
        # 先检查全部结果，按ID顺序报告第一个失败
        for sub, result in zip(subs, results):
            if isinstance(result, Exception):
                raise ExecutionError(result, plan_stage=stage, sub_prompt_id=sub.id) from result
            if isinstance(result, BaseException):
                raise result
        for sub, (response, record, key) in zip(subs, results):
            self.responses[sub.id] = response
            self.records[sub.id] = record
            if key is not None:
                self.pending_puts.append((key, response))


async def execute(
    plan_: ExecutionPlan,
    subs: Iterable[SubPrompt],
    ctx: UserContext,
    cache: Optional[SemanticCache],
    kg_registry: GraphRegistry,
    services: ServiceRegistry,
    policy: Optional[ExecutionPolicy] = None,
    *,
    prompt_echo: str = "",
) -> AggregateResponse:
    """执行计划并汇总；任一子提示失败则整体失败，不返回部分答案"""
    policy = policy or ExecutionPolicy()
    started = time.perf_counter()
    by_id = {s.id: s for s in subs}
    run = _Run(plan_, ctx, cache, kg_registry, services, policy)

    for stage, ids in enumerate(plan_.stages, 1):
        await run.run_stage(stage, [by_id[i] for i in sorted(ids)])

    conclusion = None
    if policy.consolidate:
        conclusion = select_conclusion(policy.conclusions, (s.intent for s in by_id.values()))
    parts = [run.responses[i] for i in sorted(run.responses)]
    final_text = aggregate(parts, by_id.values(), conclusion)

    # 整个提示成功后才写入缓存
    if run.cache is not None:
        for key, response in run.pending_puts:
            run.cache.put(key, replace(response, elapsed=0.0))

    trace = ExecutionTrace(
        records=tuple(run.records.values()),
        total_elapsed=time.perf_counter() - started,
        mode=policy.mode,
    )
    trace = replace(trace, step_count=count_steps(trace, policy.mode, policy.step_counting))
    logger.debug(
        f"执行完成: {len(parts)} 个子提示, 缓存命中 {trace.cache_hits}, "
        f"服务调用 {trace.service_invocations}, 步数 {trace.step_count}"
    )
    return AggregateResponse(prompt_echo=prompt_echo, final_text=final_text, parts=tuple(parts), trace=trace)
