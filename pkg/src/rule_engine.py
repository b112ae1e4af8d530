"""规则引擎

把 (子提示, 用户上下文) 绑定到某个知识图谱查询。规则谓词是可选角色要求加上
属性等值条件的合取，多条规则同时满足时按优先级、再按声明顺序选择。
"""

import logging
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Mapping, Optional

from .errors import BindError, ConfigError, GraphStoreError, RuleError
from .graph_store import KGQuery
from .models import SubPrompt, UserContext, freeze_scalars
from .utils import NAMED_PLACEHOLDER

logger = logging.getLogger(__name__)


def _template_placeholders(template: Any) -> set[str]:
    if isinstance(template, str):
        return set(NAMED_PLACEHOLDER.findall(template))
    if isinstance(template, Mapping):
        names: set[str] = set()
        for value in template.values():
            names |= _template_placeholders(value)
        return names
    if isinstance(template, (list, tuple)):
        names = set()
        for value in template:
            names |= _template_placeholders(value)
        return names
    return set()


def _substitute(template: Any, values: Mapping[str, Any], missing: set[str]) -> Any:
    if isinstance(template, str):
        whole = NAMED_PLACEHOLDER.fullmatch(template)
        if whole:
            name = whole.group(1)
            if name not in values:
                missing.add(name)
                return template
            # 整个值就是一个占位符时保留原类型（数字不会被转成字符串）
            return values[name]

        def _replace(match):
            name = match.group(1)
            if name not in values:
                missing.add(name)
                return match.group(0)
            return str(values[name])

        return NAMED_PLACEHOLDER.sub(_replace, template)
    if isinstance(template, Mapping):
        return {key: _substitute(value, values, missing) for key, value in template.items()}
    if isinstance(template, (list, tuple)):
        return [_substitute(value, values, missing) for value in template]
    return template


@dataclass(frozen=True)
class Rule:
    rule_id: str
    intent: str
    target_kg: str
    query_template: Mapping[str, Any]
    role: Optional[str] = None
    predicate: Mapping[str, Any] = MappingProxyType({})
    priority: int = 0

    def __post_init__(self):
        if not self.rule_id:
            raise ConfigError("规则缺少 rule_id")
        if not self.intent or not self.target_kg:
            raise ConfigError(f"规则 {self.rule_id} 缺少 intent 或 target_kg")
        if not isinstance(self.query_template, Mapping) or not self.query_template:
            raise ConfigError(f"规则 {self.rule_id} 的查询模板必须是非空映射")
        try:
            object.__setattr__(self, "predicate", freeze_scalars(self.predicate, f"规则 {self.rule_id} 的 when"))
        except ValueError as e:
            raise ConfigError(str(e))

    def matches(self, ctx: UserContext) -> bool:
        if self.role and ctx.role != self.role:
            return False
        return all(
            key in ctx.attributes and ctx.attributes[key] == expected
            for key, expected in self.predicate.items()
        )

    def placeholders(self) -> set[str]:
        return _template_placeholders(self.query_template)

    def context_keys(self) -> list[str]:
        """规则可能读取的上下文键：谓词键 + 模板占位符（上下文里没有的占位符来自链式事实）"""
        return sorted(set(self.predicate) | (self.placeholders() - {"role"}))

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Rule":
        try:
            return cls(
                rule_id=str(data["rule_id"]),
                intent=str(data["intent"]),
                target_kg=str(data["target_kg"]),
                query_template=data["query"],
                role=data.get("role"),
                predicate=data.get("when") or {},
                priority=int(data.get("priority", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"规则定义格式错误: {data!r} ({e})")


@dataclass(frozen=True)
class RuleSet:
    rules: tuple
    version: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise ConfigError("规则集不能为空")
        seen = set()
        for rule in self.rules:
            if rule.rule_id in seen:
                raise ConfigError(f"规则ID重复: {rule.rule_id}")
            seen.add(rule.rule_id)


@dataclass(frozen=True)
class RuleBinding:
    rule: Rule
    resolved_query: KGQuery
    sub_prompt_id: int


def match_rule(sub: SubPrompt, ctx: UserContext, rules: RuleSet) -> Rule:
    """返回意图相同且谓词满足的最高优先级规则"""
    best: Optional[Rule] = None
    for rule in rules.rules:
        if rule.intent != sub.intent or not rule.matches(ctx):
            continue
        # 声明顺序靠前者在同优先级下胜出，因此只在严格更高时替换
        if best is None or rule.priority > best.priority:
            best = rule
    if best is None:
        raise RuleError(
            f"没有规则覆盖意图 {sub.intent}（角色 {ctx.role}）",
            details={"intent": sub.intent, "role": ctx.role, "sub_prompt_id": sub.id},
        )
    logger.debug(f"P{sub.id} ({sub.intent}) 匹配规则 {best.rule_id} → {best.target_kg}")
    return best


def bind(
    rule: Rule,
    sub: SubPrompt,
    ctx: UserContext,
    prior_facts: Optional[Mapping[str, Any]] = None,
) -> RuleBinding:
    """用上下文属性与链式事实替换查询模板占位符；上下文优先于事实"""
    values: dict[str, Any] = dict(prior_facts or {})
    values.update(ctx.attributes)
    values["user_id"] = ctx.user_id
    values["role"] = ctx.role

    missing: set[str] = set()
    resolved = _substitute(rule.query_template, values, missing)
    if missing:
        raise BindError(
            f"规则 {rule.rule_id} 的查询模板存在无法解析的占位符: {', '.join(sorted(missing))}",
            details={"rule_id": rule.rule_id, "missing": sorted(missing)},
        )
    try:
        resolved_query = KGQuery.from_dict(resolved)
    except GraphStoreError as e:
        raise BindError(f"规则 {rule.rule_id} 生成的查询无效: {e.message}", code="invalid-query")
    logger.debug(f"P{sub.id} 绑定查询: {resolved_query.to_dict()}")
    return RuleBinding(rule=rule, resolved_query=resolved_query, sub_prompt_id=sub.id)


def bind_whole_domain(rule: Rule, sub: SubPrompt) -> RuleBinding:
    """不做规则收窄：只保留查询模板的 node_kind，取回该类型的全部节点"""
    node_kind = rule.query_template.get("node_kind")
    if not isinstance(node_kind, str) or not node_kind or NAMED_PLACEHOLDER.search(node_kind):
        raise BindError(f"规则 {rule.rule_id} 的查询模板没有固定的 node_kind", code="invalid-query")
    return RuleBinding(rule=rule, resolved_query=KGQuery(node_kind=node_kind), sub_prompt_id=sub.id)
