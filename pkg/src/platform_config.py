"""平台配置

单个YAML文档描述意图目录、规则、知识图谱数据源、AI服务、缓存策略、编排参数、
步数统计参数、结论模板与基准测试夹具。加载时做完整的交叉引用校验，
一次性报告所有问题。字段定义见 docs/config-schema.md。
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, TypeVar

import yaml

from .ai_services import ServiceDescriptor, ServiceKind
from .decomposer import IntentCatalog, IntentSpec
from .errors import ConfigError, RelayError
from .graph_store import DataSourceDescriptor, GraphRegistry, load_graph
from .orchestrator import ConclusionTemplate, ExecutionPolicy, StepCounting
from .rule_engine import Rule, RuleSet
from .semantic_cache import CachePolicy
from .utils import template_fields

logger = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class PlatformConfig:
    intent_catalog: IntentCatalog
    rule_set: RuleSet
    kg_sources: tuple
    services: tuple
    cache_policy: CachePolicy
    roles: frozenset
    attribute_keys: frozenset = frozenset()
    conclusions: tuple = ()
    step_counting: StepCounting = field(default_factory=StepCounting)
    max_concurrency: Optional[int] = None
    service_retries: int = 1
    retry_base_delay: float = 0.0
    bench_fixtures: Optional[str] = None
    bench_repetitions: int = 2
    version: str = "1"
    path: Optional[str] = None

    def execution_policy(self, **overrides: Any) -> ExecutionPolicy:
        settings: dict[str, Any] = dict(
            max_concurrency=self.max_concurrency,
            service_retries=self.service_retries,
            retry_base_delay=self.retry_base_delay,
            step_counting=self.step_counting,
            conclusions=self.conclusions,
        )
        settings.update(overrides)
        return ExecutionPolicy(**settings)

    def summary(self) -> dict:
        return {
            "version": self.version,
            "path": self.path,
            "intents": len(self.intent_catalog.intents),
            "rules": len(self.rule_set.rules),
            "knowledge_graphs": [d.kg_id for d in self.kg_sources],
            "services": [s.service_id for s in self.services],
            "roles": sorted(self.roles),
        }


def _parse_list(
    raw: Any,
    section: str,
    parse: Callable[[Any], T],
    violations: list[str],
) -> list[T]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        violations.append(f"{section}: 必须是列表")
        return []
    items = []
    for index, entry in enumerate(raw):
        try:
            if not isinstance(entry, Mapping):
                raise ConfigError(f"第 {index + 1} 项必须是映射")
            items.append(parse(entry))
        except RelayError as e:
            violations.append(f"{section}[{index}]: {e.message}")
    return items


def _kg_source(entry: Mapping[str, Any], base_dir: Path) -> DataSourceDescriptor:
    if not entry.get("kg_id") or not entry.get("uri"):
        raise ConfigError("知识图谱数据源必须声明 kg_id 和 uri")
    uri = Path(str(entry["uri"]))
    if not uri.is_absolute():
        uri = base_dir / uri
    fmt = entry.get("format") or ("json" if uri.suffix == ".json" else "yaml")
    return DataSourceDescriptor(
        source_id=str(entry.get("source_id", entry["kg_id"])),
        uri=str(uri),
        format=fmt,
        kg_id=str(entry["kg_id"]),
    )


def _cross_check(
    catalog: IntentCatalog,
    rules: Iterable[Rule],
    kg_sources: Iterable[DataSourceDescriptor],
    services: Iterable[ServiceDescriptor],
    roles: frozenset,
    attribute_keys: frozenset,
    conclusions: Iterable[ConclusionTemplate],
) -> list[str]:
    """引用完整性检查，返回全部违规项"""
    violations = []
    kg_ids = [d.kg_id for d in kg_sources]
    for kg_id in sorted({k for k in kg_ids if kg_ids.count(k) > 1}):
        violations.append(f"知识图谱 {kg_id} 重复声明")

    by_domain: dict[str, ServiceDescriptor] = {}
    seen_ids = set()
    for svc in services:
        if svc.domain in by_domain:
            violations.append(f"领域 {svc.domain} 声明了多个服务: {by_domain[svc.domain].service_id}, {svc.service_id}")
        if svc.service_id in seen_ids:
            violations.append(f"服务ID {svc.service_id} 重复")
        by_domain.setdefault(svc.domain, svc)
        seen_ids.add(svc.service_id)

    intents = {spec.intent for spec in catalog.intents}
    for spec in catalog.intents:
        svc = by_domain.get(spec.target_domain)
        if svc is None:
            violations.append(f"意图 {spec.intent} 的领域 {spec.target_domain} 没有对应的服务")
        elif svc.kind is ServiceKind.MOCK and spec.intent not in svc.answer_templates:
            violations.append(f"mock 服务 {svc.service_id} 缺少意图 {spec.intent} 的应答模板")

    for rule in rules:
        if rule.target_kg not in kg_ids:
            violations.append(f"规则 {rule.rule_id} 引用了未声明的知识图谱 {rule.target_kg}")
        if rule.intent not in intents:
            violations.append(f"规则 {rule.rule_id} 引用了未声明的意图 {rule.intent}")
        if rule.role and rule.role not in roles:
            violations.append(f"规则 {rule.rule_id} 引用了未声明的角色 {rule.role}")
        for key in sorted(set(rule.predicate) - attribute_keys):
            violations.append(f"规则 {rule.rule_id} 的条件使用了未声明的属性键 {key}")

    for svc in services:
        for intent in sorted(set(svc.answer_templates) - intents):
            violations.append(f"服务 {svc.service_id} 的应答模板引用了未声明的意图 {intent}")
        for intent, template in svc.answer_templates.items():
            try:
                template_fields(template)
            except ValueError as e:
                violations.append(f"服务 {svc.service_id} 的 {intent} 模板格式错误: {e}")

    for conclusion in conclusions:
        for intent in sorted(conclusion.intents - intents):
            violations.append(f"结论模板引用了未声明的意图 {intent}")
    return violations


def parse_config(data: Any, path: Optional[Path] = None) -> PlatformConfig:
    """把已解析的文档转换为 PlatformConfig"""
    where = str(path) if path else "<memory>"
    if not isinstance(data, Mapping) or not data:
        raise ConfigError(f"配置文件 {where} 为空或顶层不是映射")
    base_dir = path.parent if path else Path.cwd()
    violations: list[str] = []

    roles = frozenset(str(r) for r in data.get("roles") or ())
    if not roles:
        violations.append("roles: 至少声明一个角色")
    attribute_keys = frozenset(str(k) for k in data.get("attribute_keys") or ())

    specs = _parse_list(data.get("intents"), "intents", IntentSpec.from_dict, violations)
    catalog = None
    try:
        catalog = IntentCatalog(tuple(specs), version=str(data.get("version", "1")))
    except RelayError as e:
        violations.append(f"intents: {e.message}")

    rules = _parse_list(data.get("rules"), "rules", Rule.from_dict, violations)
    rule_set = None
    try:
        rule_set = RuleSet(tuple(rules), version=str(data.get("version", "1")))
    except RelayError as e:
        violations.append(f"rules: {e.message}")

    kg_sources = _parse_list(
        data.get("knowledge_graphs"), "knowledge_graphs", lambda e: _kg_source(e, base_dir), violations,
    )
    services = _parse_list(data.get("services"), "services", ServiceDescriptor.from_dict, violations)
    conclusions = _parse_list(data.get("conclusions"), "conclusions", ConclusionTemplate.from_dict, violations)

    cache_policy = CachePolicy()
    step_counting = StepCounting()
    orchestration = data.get("orchestration") or {}
    if not isinstance(orchestration, Mapping):
        violations.append("orchestration: 必须是映射")
        orchestration = {}
    bench = data.get("bench") or {}
    if not isinstance(bench, Mapping):
        violations.append("bench: 必须是映射")
        bench = {}
    try:
        cache = data.get("cache") or {}
        ttl = cache.get("ttl_s")
        cache_policy = CachePolicy(
            capacity=int(cache.get("capacity", 1024)),
            similarity_threshold=float(cache.get("similarity_threshold", 0.8)),
            ttl=None if ttl is None else float(ttl),
        )
    except (RelayError, TypeError, ValueError, AttributeError) as e:
        violations.append(f"cache: {getattr(e, 'message', e)}")
    try:
        step_counting = StepCounting.from_dict(data.get("step_counting"))
    except RelayError as e:
        violations.append(f"step_counting: {e.message}")

    bench_fixtures = bench.get("fixtures")
    if bench_fixtures and not Path(bench_fixtures).is_absolute():
        bench_fixtures = str(base_dir / bench_fixtures)

    structural = bool(violations)
    if catalog is not None and rule_set is not None:
        violations.extend(_cross_check(
            catalog, rules, kg_sources, services, roles, attribute_keys, conclusions,
        ))

    if violations:
        for violation in violations:
            logger.error(f"配置校验失败: {violation}")
        raise ConfigError(
            f"配置文件 {where} 存在 {len(violations)} 处问题: " + "; ".join(violations),
            code="parse-error" if structural else "referential-integrity-error",
            details={"violations": violations},
        )

    try:
        max_concurrency = orchestration.get("max_concurrency")
        config = PlatformConfig(
            intent_catalog=catalog,
            rule_set=rule_set,
            kg_sources=tuple(kg_sources),
            services=tuple(services),
            cache_policy=cache_policy,
            roles=roles,
            attribute_keys=attribute_keys,
            conclusions=tuple(conclusions),
            step_counting=step_counting,
            max_concurrency=None if max_concurrency is None else int(max_concurrency),
            service_retries=int(orchestration.get("service_retries", 1)),
            retry_base_delay=float(orchestration.get("retry_base_delay_s", 0.0)),
            bench_fixtures=bench_fixtures,
            bench_repetitions=int(bench.get("repetitions", 2)),
            version=str(data.get("version", "1")),
            path=str(path) if path else None,
        )
        config.execution_policy()
    except (TypeError, ValueError, AttributeError) as e:
        raise ConfigError(f"orchestration/bench 配置错误: {e}")
    return config


def load_config(path: str) -> PlatformConfig:
    """读取并校验平台配置文件"""
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"读取配置文件失败: {e}", code="io-error")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"解析配置文件 {path} 失败: {e}")
    config = parse_config(data, config_path.resolve())
    logger.info(
        f"已加载平台配置 {path}: {len(config.intent_catalog.intents)} 个意图, "
        f"{len(config.rule_set.rules)} 条规则, {len(config.kg_sources)} 个知识图谱, "
        f"{len(config.services)} 个服务"
    )
    return config


def load_graphs(config: PlatformConfig) -> GraphRegistry:
    """加载配置声明的全部知识图谱"""
    registry = GraphRegistry()
    for desc in config.kg_sources:
        registry.register_graph(load_graph(desc))
    return registry
