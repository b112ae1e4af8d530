"""提示分解：基于声明式意图目录把用户提示拆成带依赖的子提示"""

import logging
import re
from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter
from typing import Any, Iterable, Mapping

from .errors import ConfigError, DecompositionError
from .models import Prompt, SubPrompt
from .utils import CHAIN_PLACEHOLDER

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntentSpec:
    intent: str
    trigger_patterns: tuple
    target_domain: str
    sub_prompt_template: str
    depends_on_intents: frozenset = frozenset()
    priority: int = 0
    _matchers: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.intent:
            raise ConfigError("意图名称不能为空")
        if not self.target_domain:
            raise ConfigError(f"意图 {self.intent} 缺少 target_domain")
        if not self.sub_prompt_template.strip():
            raise ConfigError(f"意图 {self.intent} 缺少 sub_prompt_template")
        object.__setattr__(self, "trigger_patterns", tuple(p.strip() for p in self.trigger_patterns if p.strip()))
        object.__setattr__(self, "depends_on_intents", frozenset(self.depends_on_intents))
        object.__setattr__(
            self, "_matchers",
            tuple(re.compile(r"(?<!\w)" + re.escape(p), re.IGNORECASE) for p in self.trigger_patterns),
        )

    def matches(self, text: str) -> bool:
        return any(m.search(text) for m in self._matchers)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "IntentSpec":
        for name in ("triggers", "depends_on"):
            value = data.get(name, ())
            if isinstance(value, (str, bytes)) or not isinstance(value, Iterable):
                raise ConfigError(f"意图 {data.get('intent')!r} 的 {name} 必须是列表: {value!r}")
        try:
            return cls(
                intent=str(data["intent"]),
                trigger_patterns=tuple(str(p) for p in data.get("triggers", ())),
                target_domain=str(data.get("domain", "")),
                sub_prompt_template=str(data.get("template", "")),
                depends_on_intents=frozenset(data.get("depends_on", ())),
                priority=int(data.get("priority", 0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"意图定义格式错误: {data!r} ({e})")


@dataclass(frozen=True)
class IntentCatalog:
    intents: tuple
    version: str = "1"
    _positions: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "intents", tuple(self.intents))
        if not self.intents:
            raise ConfigError("意图目录至少需要一个意图")
        positions: dict[str, int] = {}
        for index, spec in enumerate(self.intents):
            if spec.intent in positions:
                raise ConfigError(f"意图名称重复: {spec.intent}")
            positions[spec.intent] = index
        object.__setattr__(self, "_positions", positions)

        for spec in self.intents:
            unknown = spec.depends_on_intents - positions.keys()
            if unknown:
                raise ConfigError(f"意图 {spec.intent} 依赖了未声明的意图: {sorted(unknown)}")
            for k in CHAIN_PLACEHOLDER.findall(spec.sub_prompt_template):
                k = int(k)
                if not 1 <= k <= len(self.intents):
                    raise ConfigError(f"意图 {spec.intent} 的占位符 {{R{k}}} 超出目录范围")
                referenced = self.intents[k - 1].intent
                if referenced not in spec.depends_on_intents:
                    raise ConfigError(
                        f"意图 {spec.intent} 的占位符 {{R{k}}} 引用的 {referenced} 不在 depends_on 中"
                    )
        try:
            tuple(TopologicalSorter({s.intent: s.depends_on_intents for s in self.intents}).static_order())
        except CycleError as e:
            raise ConfigError(f"意图依赖存在环: {e.args[1]}", code="cycle-error")

    def position(self, intent: str) -> int:
        """意图的声明位置（从0开始）"""
        return self._positions[intent]

    def get(self, intent: str) -> IntentSpec:
        return self.intents[self._positions[intent]]


def match_intents(prompt: Prompt, catalog: IntentCatalog) -> list[IntentSpec]:
    """返回直接命中的意图及其依赖闭包，按依赖分层排序，层内按优先级和声明顺序"""
    direct = [spec for spec in catalog.intents if spec.matches(prompt.text)]
    if not direct:
        raise DecompositionError(f"提示不在意图目录覆盖范围内: {prompt.text!r}")

    selected: set[str] = set()
    pending = [spec.intent for spec in direct]
    while pending:
        intent = pending.pop()
        if intent in selected:
            continue
        selected.add(intent)
        pending.extend(catalog.get(intent).depends_on_intents)

    sorter = TopologicalSorter({i: catalog.get(i).depends_on_intents for i in selected})
    sorter.prepare()
    ordered: list[IntentSpec] = []
    while sorter.is_active():
        layer = sorted(
            (catalog.get(i) for i in sorter.get_ready()),
            key=lambda s: (-s.priority, catalog.position(s.intent)),
        )
        ordered.extend(layer)
        sorter.done(*(s.intent for s in layer))

    logger.debug(
        f"意图匹配: 直接命中 {[s.intent for s in direct]}，"
        f"闭包后 {[s.intent for s in ordered]}"
    )
    return ordered


def decompose(prompt: Prompt, catalog: IntentCatalog) -> list[SubPrompt]:
    """把提示拆成子提示 P1…Pn，ID按依赖顺序分配"""
    specs = match_intents(prompt, catalog)
    ids = {spec.intent: index for index, spec in enumerate(specs, 1)}

    def _rewrite(match: re.Match) -> str:
        referenced = catalog.intents[int(match.group(1)) - 1].intent
        return f"{{R{ids[referenced]}}}"

    subs = [
        SubPrompt(
            id=ids[spec.intent],
            intent=spec.intent,
            text_template=CHAIN_PLACEHOLDER.sub(_rewrite, spec.sub_prompt_template),
            depends_on=frozenset(ids[d] for d in spec.depends_on_intents),
            target_domain=spec.target_domain,
        )
        for spec in specs
    ]
    logger.debug(f"提示已分解为 {len(subs)} 个子提示: {[s.intent for s in subs]}")
    return subs
