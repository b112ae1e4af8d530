"""网关：统一的查询入口

validate_context → decompose → plan → execute 的完整流水线，
以及配置热加载和运行时注册。除缓存与指标外每个请求互不共享状态。
"""

import asyncio
import logging
import time
from dataclasses import dataclass
from typing import Any, Mapping, Optional

from .ai_services import AIService, HealthStatus, ServiceRegistry, create_service
from .decomposer import decompose
from .errors import ModelValidationError, RelayError
from .graph_store import GraphRegistry, KnowledgeGraph
from .metrics import QueryMetrics
from .models import AggregateResponse, Prompt, UserContext, validate_context
from .orchestrator import ExecutionPolicy, execute, plan
from .platform_config import PlatformConfig, load_config, load_graphs
from .semantic_cache import SemanticCache

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Runtime:
    """一次配置加载得到的完整运行时快照"""

    config: PlatformConfig
    graphs: GraphRegistry
    services: ServiceRegistry


def build_runtime(config: PlatformConfig) -> Runtime:
    graphs = load_graphs(config)
    services = ServiceRegistry([create_service(d) for d in config.services])
    return Runtime(config=config, graphs=graphs, services=services)


def parse_request(request: Any) -> tuple[Prompt, bool]:
    """解析 {user_id, role, attributes, prompt, verbose?} 请求体"""
    if not isinstance(request, Mapping):
        raise ModelValidationError("请求体必须是JSON对象", code="invalid-request")
    missing = [k for k in ("user_id", "role", "prompt") if not isinstance(request.get(k), str)]
    if missing:
        raise ModelValidationError(
            f"请求缺少字符串字段: {', '.join(missing)}", code="invalid-request",
            details={"missing": missing},
        )
    attributes = request.get("attributes") or {}
    if not isinstance(attributes, Mapping):
        raise ModelValidationError("attributes 必须是对象", code="invalid-request")
    verbose = request.get("verbose", False)
    if not isinstance(verbose, bool):
        raise ModelValidationError("verbose 必须是布尔值", code="invalid-request")
    ctx = UserContext(user_id=request["user_id"], role=request["role"], attributes=attributes)
    return Prompt(text=request["prompt"], context=ctx), verbose


def status_for(document: Mapping[str, Any]) -> int:
    """结构化应答对应的HTTP状态码"""
    error = document.get("error")
    if not error:
        return 200
    if error.get("stage") in ("request", "context"):
        return 400
    if error.get("code") in ("no-intent-matched", "no-rule-matched"):
        return 422
    if error.get("code") == "service-unavailable":
        return 502
    return 500


class Gateway:
    """多AI服务的统一接口"""

    def __init__(self, runtime: Runtime, cache: Optional[SemanticCache] = None):
        self._runtime = runtime
        self.cache = cache if cache is not None else SemanticCache(runtime.config.cache_policy)
        self.metrics = QueryMetrics()
        self._reload_lock = asyncio.Lock()

    @classmethod
    def from_path(cls, path: str) -> "Gateway":
        return cls(build_runtime(load_config(path)))

    @property
    def runtime(self) -> Runtime:
        return self._runtime

    @property
    def config(self) -> PlatformConfig:
        return self._runtime.config

    async def reload(self, path: Optional[str] = None) -> PlatformConfig:
        """重新加载配置并原子替换运行时；失败时保留旧快照并抛出异常"""
        async with self._reload_lock:
            target = path or self.config.path
            if not target:
                raise RelayError("当前配置没有文件路径，无法重新加载")
            config = await asyncio.to_thread(load_config, target)
            runtime = await asyncio.to_thread(build_runtime, config)
            self._runtime = runtime
            # 应答由旧图谱和旧服务生成，换快照后一律作废
            self.cache.update_policy(config.cache_policy)
            self.cache.clear()
            logger.info(f"平台配置已重新加载: {config.summary()}")
            return config

    def register_graph(self, graph: KnowledgeGraph, replace: bool = False) -> None:
        self._runtime.graphs.register_graph(graph, replace=replace)
        if replace:
            self.cache.clear()

    def register_service(self, service: AIService, replace: bool = False) -> None:
        self._runtime.services.register(service, replace=replace)
        if replace:
            self.cache.clear()

    async def run_prompt(
        self,
        prompt: Prompt,
        *,
        policy: Optional[ExecutionPolicy] = None,
        cache: Optional[SemanticCache] = None,
        sequential: bool = False,
    ) -> AggregateResponse:
        """运行完整流水线，错误以 RelayError 抛出"""
        runtime = self._runtime
        ctx = validate_context(prompt.context, runtime.config)
        subs = decompose(prompt, runtime.config.intent_catalog)
        execution_plan = plan(subs, ctx, runtime.config.rule_set, runtime.services)
        if sequential:
            execution_plan = execution_plan.sequential()
        return await execute(
            execution_plan,
            subs,
            ctx,
            cache if cache is not None else self.cache,
            runtime.graphs,
            runtime.services,
            policy or runtime.config.execution_policy(),
            prompt_echo=prompt.text,
        )

    async def handle_query(self, request: Any) -> dict:
        """返回 {prompt, final_text, parts, trace?} 或 {error: {stage, code, message}}"""
        started = time.perf_counter()
        try:
            prompt, verbose = parse_request(request)
            response = await self.run_prompt(prompt)
        except RelayError as e:
            logger.warning(f"请求失败 [{e.stage}/{e.code}]: {e.message}")
            self.metrics.record_error(e.code)
            return {"error": e.to_document()}
        except Exception as e:
            logger.error(f"处理请求时出现未预期的错误: {e}", exc_info=True)
            self.metrics.record_error("internal-error")
            return {"error": {"stage": "internal", "code": "internal-error", "message": str(e)}}

        self.metrics.record_query(time.perf_counter() - started, response.trace.step_count)
        return response.to_dict(verbose=verbose)

    async def check_services(self) -> dict[str, HealthStatus]:
        services = self._runtime.services.services()
        statuses = await asyncio.gather(*(s.health() for s in services))
        return {s.service_id: status for s, status in zip(services, statuses)}

    def get_metrics(self) -> dict:
        cache = self.cache.stats()
        data = self.metrics.snapshot()
        data["cache"] = cache
        return data
