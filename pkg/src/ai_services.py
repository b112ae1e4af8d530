"""AI服务适配器

每个知识领域对应一个AI服务。mock 服务用意图对应的应答模板渲染检索到的事实，
可完全离线测试；http 服务把子提示和上下文POST到外部端点。
"""

import asyncio
import logging
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping, Optional

import aiohttp

from .errors import ConfigError, ModelValidationError, ServiceError, ServiceUnavailableError
from .graph_store import ContextBundle
from .models import ServiceResponse
from .utils import render_template

logger = logging.getLogger(__name__)


class ServiceKind(str, Enum):
    MOCK = "mock"
    HTTP = "http"


@dataclass(frozen=True)
class ServiceDescriptor:
    service_id: str
    domain: str
    kind: ServiceKind = ServiceKind.MOCK
    endpoint: Optional[str] = None
    answer_templates: Mapping[str, str] = field(default_factory=dict)
    simulated_latency: Optional[float] = None  # 秒
    timeout: float = 10.0
    max_in_flight: int = 8

    def __post_init__(self):
        if not self.service_id or not self.domain:
            raise ConfigError("服务必须声明 service_id 和 domain")
        object.__setattr__(self, "kind", ServiceKind(self.kind))
        object.__setattr__(self, "answer_templates", MappingProxyType(dict(self.answer_templates)))
        if self.kind is ServiceKind.HTTP and not self.endpoint:
            raise ConfigError(f"http 服务 {self.service_id} 必须配置 endpoint")
        if self.kind is ServiceKind.MOCK and not self.answer_templates:
            raise ConfigError(f"mock 服务 {self.service_id} 必须配置 answer_templates")
        if self.simulated_latency is not None and self.simulated_latency < 0:
            raise ConfigError(f"服务 {self.service_id} 的 simulated_latency 不能为负")
        if self.timeout <= 0 or self.max_in_flight < 1:
            raise ConfigError(f"服务 {self.service_id} 的 timeout/max_in_flight 必须为正")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ServiceDescriptor":
        try:
            latency_ms = data.get("simulated_latency_ms")
            return cls(
                service_id=str(data["service_id"]),
                domain=str(data["domain"]),
                kind=ServiceKind(data.get("kind", "mock")),
                endpoint=data.get("endpoint"),
                answer_templates={str(k): str(v) for k, v in (data.get("answer_templates") or {}).items()},
                simulated_latency=None if latency_ms is None else float(latency_ms) / 1000,
                timeout=float(data.get("timeout_s", 10.0)),
                max_in_flight=int(data.get("max_in_flight", 8)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"服务定义格式错误: {data!r} ({e})")


@dataclass(frozen=True)
class HealthStatus:
    healthy: bool
    reason: str = ""

    def to_dict(self) -> dict:
        data: dict = {"healthy": self.healthy}
        if self.reason:
            data["reason"] = self.reason
        return data


class AIService(ABC):
    """AI服务适配器基类"""

    def __init__(self, descriptor: ServiceDescriptor):
        self.descriptor = descriptor

    @property
    def service_id(self) -> str:
        return self.descriptor.service_id

    @abstractmethod
    async def invoke(self, sub_text: str, context: ContextBundle, *, intent: str) -> ServiceResponse:
        """回答一个子提示"""

    @abstractmethod
    async def health(self) -> HealthStatus:
        """探测服务健康状态，不抛出异常"""


class MockService(AIService):
    """确定性的模板渲染服务"""

    async def invoke(self, sub_text: str, context: ContextBundle, *, intent: str) -> ServiceResponse:
        started = time.perf_counter()
        if self.descriptor.simulated_latency:
            await asyncio.sleep(self.descriptor.simulated_latency)

        template = self.descriptor.answer_templates.get(intent)
        if template is None:
            raise ServiceError(
                f"服务 {self.service_id} 没有意图 {intent} 的应答模板",
                code="template-missing",
                details={"service_id": self.service_id, "intent": intent},
            )
        try:
            text = render_template(template, context.rendered_facts)
        except KeyError as e:
            raise ServiceError(
                f"服务 {self.service_id} 渲染 {intent} 时缺少事实 {e.args[0]}",
                details={"service_id": self.service_id, "missing": e.args[0], "kg_id": context.kg_id},
            )
        return ServiceResponse(
            sub_prompt_id=context.sub_prompt_id,
            text=text,
            facts=dict(context.rendered_facts),
            source_service=self.service_id,
            elapsed=time.perf_counter() - started,
        )

    async def health(self) -> HealthStatus:
        return HealthStatus(True)


class HttpService(AIService):
    """外部端点适配器

    请求: POST {sub_text, intent, context}，应答: {text, facts}。
    """

    def __init__(self, descriptor: ServiceDescriptor):
        super().__init__(descriptor)
        self._semaphore: Optional[asyncio.Semaphore] = None

    def _limiter(self) -> asyncio.Semaphore:
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.descriptor.max_in_flight)
        return self._semaphore

    def _unavailable(self, reason: str) -> ServiceUnavailableError:
        return ServiceUnavailableError(
            f"服务 {self.service_id} 不可用: {reason}",
            details={"service_id": self.service_id, "endpoint": self.descriptor.endpoint, "reason": reason},
        )

    async def invoke(self, sub_text: str, context: ContextBundle, *, intent: str) -> ServiceResponse:
        payload = {"sub_text": sub_text, "intent": intent, "context": context.to_dict()}
        timeout = aiohttp.ClientTimeout(total=self.descriptor.timeout)
        started = time.perf_counter()
        async with self._limiter():
            try:
                async with aiohttp.ClientSession(timeout=timeout) as session:
                    async with session.post(self.descriptor.endpoint, json=payload) as response:
                        if response.status != 200:
                            raise self._unavailable(f"状态码 {response.status}")
                        reply = await response.json(content_type=None)
            except asyncio.TimeoutError:
                raise self._unavailable("请求超时")
            except aiohttp.ClientError as e:
                raise self._unavailable(f"连接失败: {e}")
            except ValueError as e:
                raise self._unavailable(f"应答不是合法JSON: {e}")

        if not isinstance(reply, Mapping) or not isinstance(reply.get("text"), str):
            raise self._unavailable("应答缺少 text 字段")
        try:
            return ServiceResponse(
                sub_prompt_id=context.sub_prompt_id,
                text=reply["text"],
                facts=reply.get("facts") or {},
                source_service=self.service_id,
                elapsed=time.perf_counter() - started,
            )
        except (ModelValidationError, AttributeError) as e:
            raise self._unavailable(f"应答格式错误: {e}")

    async def health(self) -> HealthStatus:
        timeout = aiohttp.ClientTimeout(total=min(self.descriptor.timeout, 5.0))
        try:
            async with aiohttp.ClientSession(timeout=timeout) as session:
                async with session.get(self.descriptor.endpoint) as response:
                    if response.status >= 500:
                        return HealthStatus(False, f"status {response.status}")
                    return HealthStatus(True)
        except asyncio.TimeoutError:
            return HealthStatus(False, "timeout")
        except aiohttp.ClientError as e:
            return HealthStatus(False, f"connection: {e}")


def create_service(descriptor: ServiceDescriptor) -> AIService:
    if descriptor.kind is ServiceKind.HTTP:
        return HttpService(descriptor)
    return MockService(descriptor)


class ServiceRegistry:
    """领域 → AI服务，每个领域至多一个服务"""

    def __init__(self, services: Optional[list] = None):
        self._lock = threading.Lock()
        self._by_domain: Mapping[str, AIService] = MappingProxyType({})
        for service in services or []:
            self.register(service)

    def register(self, service: AIService, replace: bool = False) -> "ServiceRegistry":
        domain = service.descriptor.domain
        with self._lock:
            if not replace and domain in self._by_domain:
                raise ConfigError(
                    f"领域 {domain} 已有服务 {self._by_domain[domain].service_id}",
                    code="duplicate-domain",
                )
            for other in self._by_domain.values():
                if other.service_id == service.service_id and other.descriptor.domain != domain:
                    raise ConfigError(f"服务 {service.service_id} 不能服务多个领域", code="duplicate-service")
            updated = dict(self._by_domain)
            updated[domain] = service
            self._by_domain = MappingProxyType(updated)
        logger.info(f"已注册AI服务 {service.service_id} ({service.descriptor.kind.value}) → 领域 {domain}")
        return self

    def for_domain(self, domain: str) -> AIService:
        service = self._by_domain.get(domain)
        if service is None:
            raise ServiceError(
                f"领域 {domain} 没有注册AI服务",
                code="no-service-for-domain",
                stage="plan",
                details={"domain": domain, "known_domains": sorted(self._by_domain)},
            )
        return service

    def get(self, service_id: str) -> AIService:
        for service in self._by_domain.values():
            if service.service_id == service_id:
                return service
        raise ServiceError(f"未知的AI服务: {service_id}", code="unknown-service")

    def services(self) -> list[AIService]:
        return sorted(self._by_domain.values(), key=lambda s: s.service_id)

    def __contains__(self, domain: str) -> bool:
        return domain in self._by_domain

    def __len__(self) -> int:
        return len(self._by_domain)
