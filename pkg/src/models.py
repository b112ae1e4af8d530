"""共享领域类型

所有类型构造后不可变，可在并发执行上下文间安全共享。
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone
from graphlib import CycleError, TopologicalSorter
from types import MappingProxyType
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional

from .errors import ContextError, ModelValidationError
from .utils import CHAIN_PLACEHOLDER, is_scalar

if TYPE_CHECKING:
    from .orchestrator import ExecutionTrace
    from .platform_config import PlatformConfig

# 缓存命中时ServiceResponse.source_service的固定取值
CACHE_SERVICE_ID = "semantic-cache"


def freeze_scalars(values: Optional[Mapping[str, Any]], what: str) -> Mapping[str, Any]:
    """复制为只读映射，并校验键为字符串、值为标量"""
    frozen = {}
    for key, value in (values or {}).items():
        if not isinstance(key, str) or not key:
            raise ModelValidationError(f"{what} 的键必须是非空字符串: {key!r}")
        if not is_scalar(value):
            raise ModelValidationError(f"{what}[{key}] 必须是标量值，实际为 {type(value).__name__}")
        frozen[key] = value
    return MappingProxyType(frozen)


@dataclass(frozen=True)
class UserContext:
    """调用方声明的用户身份、角色与属性"""

    user_id: str
    role: str
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.user_id, str) or not self.user_id.strip():
            raise ModelValidationError("user_id 不能为空")
        if not isinstance(self.role, str) or not self.role.strip():
            raise ModelValidationError("role 不能为空")
        object.__setattr__(self, "attributes", freeze_scalars(self.attributes, "attributes"))

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "role": self.role, "attributes": dict(self.attributes)}


@dataclass(frozen=True)
class Prompt:
    text: str
    context: UserContext
    received_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc))

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ModelValidationError("提示文本不能为空", code="invalid-prompt")


@dataclass(frozen=True)
class SubPrompt:
    """分解后的子提示 P1…Pn，text_template 可包含 {R<k>} 链式占位符"""

    id: int
    intent: str
    text_template: str
    depends_on: frozenset = frozenset()
    target_domain: str = ""

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id < 1:
            raise ModelValidationError(f"子提示ID必须是正整数: {self.id!r}")
        object.__setattr__(self, "depends_on", frozenset(self.depends_on))
        if self.id in self.depends_on:
            raise ModelValidationError(f"子提示 P{self.id} 不能依赖自身")
        for k in self.placeholders():
            if k not in self.depends_on:
                raise ModelValidationError(
                    f"子提示 P{self.id} 的占位符 {{R{k}}} 不在依赖集合 {sorted(self.depends_on)} 中"
                )

    def placeholders(self) -> list[int]:
        return [int(k) for k in CHAIN_PLACEHOLDER.findall(self.text_template)]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "intent": self.intent,
            "text_template": self.text_template,
            "depends_on": sorted(self.depends_on),
            "target_domain": self.target_domain,
        }


@dataclass(frozen=True)
class ServiceResponse:
    """子提示的应答 R1…Rn"""

    sub_prompt_id: int
    text: str
    facts: Mapping[str, Any] = field(default_factory=dict)
    source_service: str = ""
    from_cache: bool = False
    elapsed: float = 0.0

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ModelValidationError(f"P{self.sub_prompt_id} 的应答文本为空")
        if self.from_cache and self.source_service != CACHE_SERVICE_ID:
            raise ModelValidationError("缓存命中的应答必须以缓存作为来源服务")
        object.__setattr__(self, "facts", freeze_scalars(self.facts, "facts"))

    def to_dict(self, include_timing: bool = True) -> dict:
        data = {
            "sub_prompt_id": self.sub_prompt_id,
            "text": self.text,
            "facts": dict(sorted(self.facts.items())),
            "source_service": self.source_service,
            "from_cache": self.from_cache,
        }
        if include_timing:
            data["elapsed_ms"] = round(self.elapsed * 1000, 3)
        return data


@dataclass(frozen=True)
class AggregateResponse:
    prompt_echo: str
    final_text: str
    parts: tuple
    trace: "ExecutionTrace"

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        ids = [part.sub_prompt_id for part in self.parts]
        if ids != sorted(set(ids)):
            raise ModelValidationError(f"parts 必须按子提示ID唯一且有序: {ids}")

    def to_dict(self, verbose: bool = False, include_timing: bool = True) -> dict:
        data = {
            "prompt": self.prompt_echo,
            "final_text": self.final_text,
            "parts": [part.to_dict(include_timing) for part in self.parts],
        }
        if verbose:
            data["trace"] = self.trace.to_dict(include_timing)
        return data


def check_decomposition(subs: Iterable[SubPrompt]) -> list[SubPrompt]:
    """校验一组子提示：ID唯一、依赖存在且无环；返回按ID排序的列表"""
    ordered = sorted(subs, key=lambda s: s.id)
    ids = [s.id for s in ordered]
    if len(ids) != len(set(ids)):
        raise ModelValidationError(f"子提示ID重复: {ids}")
    known = set(ids)
    for sub in ordered:
        missing = sub.depends_on - known
        if missing:
            raise ModelValidationError(f"P{sub.id} 依赖了不存在的子提示: {sorted(missing)}")
    try:
        tuple(TopologicalSorter({s.id: s.depends_on for s in ordered}).static_order())
    except CycleError as e:
        raise ModelValidationError(f"子提示依赖存在环: {e.args[1]}", code="cycle-detected")
    return ordered


def validate_context(ctx: UserContext, config: "PlatformConfig") -> UserContext:
    """按平台配置校验角色与属性键，通过时原样返回"""
    if ctx.role not in config.roles:
        raise ContextError(
            f"未声明的角色: {ctx.role}", code="unknown-role",
            details={"declared_roles": sorted(config.roles)},
        )
    unknown = sorted(set(ctx.attributes) - set(config.attribute_keys))
    if unknown:
        raise ContextError(
            f"未声明的属性键: {', '.join(unknown)}", code="unknown-attribute-key",
            details={"unknown_keys": unknown},
        )
    return ctx
