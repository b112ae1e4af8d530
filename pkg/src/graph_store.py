"""图知识库

节点承载领域数据，边表示业务关系；子域与业务端点通过层级关系相连。
图加载后是不可变快照，注册表以整体替换的方式原子更新。
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Optional

import yaml

from .errors import GraphStoreError
from .models import freeze_scalars
from .utils import human_join, is_number

logger = logging.getLogger(__name__)

DEFAULT_HIERARCHY_RELATIONS = ("has-subdomain", "has-endpoint")


class LoaderFormat(str, Enum):
    YAML = "yaml"
    JSON = "json"


@dataclass(frozen=True)
class DataSourceDescriptor:
    source_id: str
    uri: str
    format: LoaderFormat = LoaderFormat.YAML
    kg_id: Optional[str] = None

    def __post_init__(self):
        if not self.uri or not str(self.uri).strip():
            raise GraphStoreError(f"数据源 {self.source_id} 的 uri 不能为空")
        try:
            object.__setattr__(self, "format", LoaderFormat(self.format))
        except ValueError:
            raise GraphStoreError(f"不支持的数据源格式: {self.format}", code="io-error")


@dataclass(frozen=True)
class KGNode:
    node_id: str
    kind: str
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.node_id:
            raise GraphStoreError("节点缺少 id")
        if not self.kind:
            raise GraphStoreError(f"节点 {self.node_id} 缺少 kind")
        try:
            object.__setattr__(self, "attributes", freeze_scalars(self.attributes, f"节点 {self.node_id}"))
        except ValueError as e:
            raise GraphStoreError(str(e))

    def to_dict(self) -> dict:
        return {"id": self.node_id, "kind": self.kind, "attributes": dict(self.attributes)}


@dataclass(frozen=True, order=True)
class KGEdge:
    source: str
    target: str
    relation: str

    def to_dict(self) -> dict:
        return {"from": self.source, "to": self.target, "relation": self.relation}


@dataclass(frozen=True)
class FactField:
    attribute: str
    name: str
    item_format: Optional[str] = None
    joiner: Optional[str] = None


@dataclass(frozen=True)
class FactExport:
    """某类节点对外导出的事实声明"""

    kind: str
    fields: tuple = ()
    count_name: Optional[str] = None

    @classmethod
    def from_dict(cls, kind: str, data: Mapping[str, Any]) -> "FactExport":
        attributes = data.get("attributes") or ()
        if not isinstance(attributes, (list, tuple)):
            raise GraphStoreError(f"{kind} 的 attributes 必须是列表: {attributes!r}")
        fields = []
        for item in attributes:
            if isinstance(item, str):
                fields.append(FactField(attribute=item, name=item))
            elif isinstance(item, Mapping) and item.get("attribute"):
                fields.append(FactField(
                    attribute=str(item["attribute"]),
                    name=str(item.get("name", item["attribute"])),
                    item_format=item.get("item_format"),
                    joiner=item.get("joiner"),
                ))
            else:
                raise GraphStoreError(f"{kind} 的事实导出声明格式错误: {item!r}")
        return cls(kind=kind, fields=tuple(fields), count_name=data.get("count"))

    def to_dict(self) -> dict:
        attributes: list[Any] = []
        for f in self.fields:
            if f.name == f.attribute and f.item_format is None and f.joiner is None:
                attributes.append(f.attribute)
            else:
                entry = {"attribute": f.attribute, "name": f.name}
                if f.item_format is not None:
                    entry["item_format"] = f.item_format
                if f.joiner is not None:
                    entry["joiner"] = f.joiner
                attributes.append(entry)
        data: dict[str, Any] = {"attributes": attributes}
        if self.count_name:
            data["count"] = self.count_name
        return data


def _index_key(value: Any) -> tuple:
    if isinstance(value, bool):
        return ("bool", value)
    if is_number(value):
        return ("num", float(value))
    return ("str", str(value))


@dataclass(frozen=True)
class KnowledgeGraph:
    kg_id: str
    nodes: tuple = ()
    edges: tuple = ()
    source: Optional[DataSourceDescriptor] = None
    fact_exports: Mapping[str, FactExport] = field(default_factory=dict)
    hierarchy_relations: frozenset = frozenset(DEFAULT_HIERARCHY_RELATIONS)
    _by_id: Mapping[str, KGNode] = field(init=False, repr=False, compare=False)
    _by_kind: Mapping[str, tuple] = field(init=False, repr=False, compare=False)
    _attr_index: Mapping[tuple, Mapping[tuple, tuple]] = field(init=False, repr=False, compare=False)
    _adjacency: Mapping[str, tuple] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.node_id))
        by_id: dict[str, KGNode] = {}
        for node in nodes:
            if node.node_id in by_id:
                raise GraphStoreError(f"{self.kg_id} 中节点ID重复: {node.node_id}")
            by_id[node.node_id] = node

        edges = tuple(sorted(set(self.edges)))
        adjacency: dict[str, list[KGEdge]] = {}
        for edge in edges:
            for endpoint in (edge.source, edge.target):
                if endpoint not in by_id:
                    raise GraphStoreError(
                        f"{self.kg_id} 中的边 {edge.source} -[{edge.relation}]-> {edge.target} "
                        f"引用了不存在的节点 {endpoint}"
                    )
            adjacency.setdefault(edge.source, []).append(edge)
            if edge.target != edge.source:
                adjacency.setdefault(edge.target, []).append(edge)

        hierarchy = frozenset(self.hierarchy_relations)
        graph: dict[str, set[str]] = {}
        for edge in edges:
            if edge.relation in hierarchy:
                graph.setdefault(edge.target, set()).add(edge.source)
        try:
            tuple(TopologicalSorter(graph).static_order())
        except CycleError as e:
            raise GraphStoreError(f"{self.kg_id} 的层级关系存在环: {e.args[1]}", code="cycle-error")

        by_kind: dict[str, list[KGNode]] = {}
        attr_index: dict[tuple, dict[tuple, list[KGNode]]] = {}
        for node in nodes:
            by_kind.setdefault(node.kind, []).append(node)
            for key, value in node.attributes.items():
                attr_index.setdefault((node.kind, key), {}).setdefault(_index_key(value), []).append(node)

        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "hierarchy_relations", hierarchy)
        object.__setattr__(self, "fact_exports", MappingProxyType(dict(self.fact_exports)))
        object.__setattr__(self, "_by_id", MappingProxyType(by_id))
        object.__setattr__(self, "_by_kind", MappingProxyType({k: tuple(v) for k, v in by_kind.items()}))
        object.__setattr__(self, "_attr_index", MappingProxyType({
            k: MappingProxyType({vk: tuple(vs) for vk, vs in v.items()}) for k, v in attr_index.items()
        }))
        object.__setattr__(self, "_adjacency", MappingProxyType({k: tuple(v) for k, v in adjacency.items()}))

    def node(self, node_id: str) -> KGNode:
        return self._by_id[node_id]

    def nodes_of_kind(self, kind: str) -> tuple:
        return self._by_kind.get(kind, ())

    def lookup(self, kind: str, key: str, value: Any) -> tuple:
        """精确匹配索引 (kind, key) → 节点"""
        return self._attr_index.get((kind, key), {}).get(_index_key(value), ())

    def incident_edges(self, node_id: str) -> tuple:
        return self._adjacency.get(node_id, ())


# ---------------------------------------------------------------- 查询


@dataclass(frozen=True)
class AttributeFilter:
    key: str
    op: str
    value: Any

    def to_list(self) -> list:
        return [self.key, self.op, self.value]


def _op_eq(actual: Any, expected: Any) -> bool:
    return _index_key(actual) == _index_key(expected)


def _op_lt(actual: Any, expected: Any) -> bool:
    return is_number(actual) and is_number(expected) and actual < expected


def _op_gt(actual: Any, expected: Any) -> bool:
    return is_number(actual) and is_number(expected) and actual > expected


def _op_contains(actual: Any, expected: Any) -> bool:
    return str(expected).lower() in str(actual).lower()


OPERATORS: Mapping[str, Callable[[Any, Any], bool]] = MappingProxyType({
    "eq": _op_eq,
    "lt": _op_lt,
    "gt": _op_gt,
    "contains": _op_contains,
})

DIRECTIONS = ("out", "in", "any")


@dataclass(frozen=True)
class RelationConstraint:
    """一跳关系约束：存在一条 relation 边连到满足过滤条件的节点"""

    relation: str
    node_kind: Optional[str] = None
    filters: tuple = ()
    direction: str = "any"

    def to_dict(self) -> dict:
        data: dict[str, Any] = {"relation": self.relation, "direction": self.direction}
        if self.node_kind:
            data["node_kind"] = self.node_kind
        if self.filters:
            data["filters"] = [f.to_list() for f in self.filters]
        return data


def _parse_filters(raw: Any) -> tuple:
    filters = []
    for item in raw or ():
        if isinstance(item, Mapping):
            filters.append(AttributeFilter(str(item["key"]), str(item["op"]), item.get("value")))
        elif isinstance(item, (list, tuple)) and len(item) == 3:
            filters.append(AttributeFilter(str(item[0]), str(item[1]), item[2]))
        else:
            raise GraphStoreError(f"过滤条件格式错误: {item!r}")
    return tuple(filters)


@dataclass(frozen=True)
class KGQuery:
    node_kind: Optional[str] = None
    attribute_filters: tuple = ()
    relation_constraints: tuple = ()
    limit: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "attribute_filters", tuple(self.attribute_filters))
        object.__setattr__(self, "relation_constraints", tuple(self.relation_constraints))
        if not (self.node_kind or self.attribute_filters or self.relation_constraints):
            raise GraphStoreError("查询至少需要 node_kind、过滤条件或关系约束之一")
        if self.limit is not None and (not isinstance(self.limit, int) or self.limit < 1):
            raise GraphStoreError(f"limit 必须是正整数: {self.limit!r}")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KGQuery":
        try:
            relations = tuple(
                RelationConstraint(
                    relation=str(r["relation"]),
                    node_kind=r.get("node_kind"),
                    filters=_parse_filters(r.get("filters")),
                    direction=str(r.get("direction", "any")),
                )
                for r in data.get("relations", ()) or ()
            )
            return cls(
                node_kind=data.get("node_kind"),
                attribute_filters=_parse_filters(data.get("filters")),
                relation_constraints=relations,
                limit=data.get("limit"),
            )
        except (KeyError, TypeError, AttributeError) as e:
            raise GraphStoreError(f"查询格式错误: {data!r} ({e})")

    def to_dict(self) -> dict:
        data: dict[str, Any] = {}
        if self.node_kind:
            data["node_kind"] = self.node_kind
        if self.attribute_filters:
            data["filters"] = [f.to_list() for f in self.attribute_filters]
        if self.relation_constraints:
            data["relations"] = [r.to_dict() for r in self.relation_constraints]
        if self.limit is not None:
            data["limit"] = self.limit
        return data


@dataclass(frozen=True)
class ContextBundle:
    """为某个子提示检索出的知识图谱上下文切片"""

    kg_id: str
    sub_prompt_id: int
    matched_nodes: tuple = ()
    matched_edges: tuple = ()
    rendered_facts: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "matched_nodes", tuple(self.matched_nodes))
        object.__setattr__(self, "matched_edges", tuple(self.matched_edges))
        ids = {n.node_id for n in self.matched_nodes}
        for edge in self.matched_edges:
            if edge.source not in ids or edge.target not in ids:
                raise GraphStoreError(f"上下文中的边 {edge} 端点不在匹配节点中")
        object.__setattr__(self, "rendered_facts", freeze_scalars(self.rendered_facts, "rendered_facts"))

    def to_dict(self) -> dict:
        return {
            "kg_id": self.kg_id,
            "sub_prompt_id": self.sub_prompt_id,
            "nodes": [n.to_dict() for n in self.matched_nodes],
            "edges": [e.to_dict() for e in self.matched_edges],
            "facts": dict(self.rendered_facts),
        }


def _check_operators(filters: Iterable[AttributeFilter]) -> None:
    for f in filters:
        if f.op not in OPERATORS:
            raise GraphStoreError(
                f"未知的属性运算符: {f.op}（支持 {', '.join(OPERATORS)}）",
                code="unknown-attribute-operator",
            )


def node_matches(node: KGNode, kind: Optional[str], filters: Iterable[AttributeFilter]) -> bool:
    if kind and node.kind != kind:
        return False
    for f in filters:
        if f.key not in node.attributes:
            return False
        if not OPERATORS[f.op](node.attributes[f.key], f.value):
            return False
    return True


def _satisfies_relation(graph: KnowledgeGraph, node: KGNode, constraint: RelationConstraint) -> bool:
    for edge in graph.incident_edges(node.node_id):
        if edge.relation != constraint.relation:
            continue
        others = []
        if constraint.direction in ("out", "any") and edge.source == node.node_id:
            others.append(edge.target)
        if constraint.direction in ("in", "any") and edge.target == node.node_id:
            others.append(edge.source)
        for other in others:
            if node_matches(graph.node(other), constraint.node_kind, constraint.filters):
                return True
    return False


def render_facts(graph: KnowledgeGraph, nodes: Iterable[KGNode]) -> dict:
    """按图谱的事实导出声明，把匹配节点提炼为命名标量"""
    nodes = list(nodes)
    facts: dict[str, Any] = {}
    for kind in sorted(graph.fact_exports):
        export = graph.fact_exports[kind]
        of_kind = [n for n in nodes if n.kind == kind]
        if export.count_name:
            facts[export.count_name] = len(of_kind)
        for f in export.fields:
            values: list[Any] = []
            for node in of_kind:
                value = node.attributes.get(f.attribute)
                if value is not None and value not in values:
                    values.append(value)
            if not values:
                continue
            if len(values) == 1 and f.item_format is None:
                facts[f.name] = values[0]
            else:
                fmt = f.item_format or "{}"
                facts[f.name] = human_join((fmt.format(v) for v in values), f.joiner)
    return facts


def query(graph: KnowledgeGraph, q: KGQuery, sub_prompt_id: int = 0) -> ContextBundle:
    """执行查询，结果按 node_id 排序后截断到 limit"""
    _check_operators(q.attribute_filters)
    for constraint in q.relation_constraints:
        _check_operators(constraint.filters)
        if constraint.direction not in DIRECTIONS:
            raise GraphStoreError(f"未知的关系方向: {constraint.direction}", code="unknown-attribute-operator")

    candidates: Iterable[KGNode]
    indexed = next((f for f in q.attribute_filters if f.op == "eq"), None)
    if q.node_kind and indexed is not None:
        candidates = graph.lookup(q.node_kind, indexed.key, indexed.value)
    elif q.node_kind:
        candidates = graph.nodes_of_kind(q.node_kind)
    else:
        candidates = graph.nodes

    matched = [
        node for node in candidates
        if node_matches(node, q.node_kind, q.attribute_filters)
        and all(_satisfies_relation(graph, node, c) for c in q.relation_constraints)
    ]
    matched.sort(key=lambda n: n.node_id)
    if q.limit is not None:
        matched = matched[:q.limit]

    ids = {n.node_id for n in matched}
    edges = [e for e in graph.edges if e.source in ids and e.target in ids]
    return ContextBundle(
        kg_id=graph.kg_id,
        sub_prompt_id=sub_prompt_id,
        matched_nodes=tuple(matched),
        matched_edges=tuple(edges),
        rendered_facts=render_facts(graph, matched),
    )


# ---------------------------------------------------------------- 加载与序列化


def parse_graph(data: Any, desc: DataSourceDescriptor) -> KnowledgeGraph:
    """把已解析的文档转换为 KnowledgeGraph"""
    if not isinstance(data, Mapping):
        raise GraphStoreError(f"图谱文件 {desc.uri} 顶层必须是映射")
    kg_id = desc.kg_id or data.get("kg_id")
    if not kg_id:
        raise GraphStoreError(f"图谱文件 {desc.uri} 缺少 kg_id")
    if desc.kg_id and data.get("kg_id") and data["kg_id"] != desc.kg_id:
        raise GraphStoreError(f"图谱文件声明的 kg_id {data['kg_id']} 与配置 {desc.kg_id} 不一致")

    nodes = []
    for raw in data.get("nodes") or ():
        if not isinstance(raw, Mapping) or not raw.get("id"):
            raise GraphStoreError(f"{kg_id} 中的节点缺少 id: {raw!r}")
        attributes = raw.get("attributes") or {}
        if not isinstance(attributes, Mapping):
            raise GraphStoreError(f"{kg_id} 中节点 {raw['id']} 的 attributes 必须是映射: {attributes!r}")
        nodes.append(KGNode(str(raw["id"]), str(raw.get("kind", "")), attributes))

    edges = []
    for raw in data.get("edges") or ():
        try:
            edges.append(KGEdge(str(raw["from"]), str(raw["to"]), str(raw["relation"])))
        except (KeyError, TypeError):
            raise GraphStoreError(f"{kg_id} 中的边格式错误: {raw!r}")

    facts = data.get("facts") or {}
    if not isinstance(facts, Mapping):
        raise GraphStoreError(f"{kg_id} 的 facts 必须是映射")
    exports = {}
    for kind, spec in facts.items():
        spec = spec or {}
        if not isinstance(spec, Mapping):
            raise GraphStoreError(f"{kg_id} 中 {kind} 的事实导出必须是映射: {spec!r}")
        exports[str(kind)] = FactExport.from_dict(str(kind), spec)

    hierarchy = data.get("hierarchy_relations") or DEFAULT_HIERARCHY_RELATIONS
    if isinstance(hierarchy, str):
        raise GraphStoreError(f"{kg_id} 的 hierarchy_relations 必须是列表")

    return KnowledgeGraph(
        kg_id=str(kg_id),
        nodes=tuple(nodes),
        edges=tuple(edges),
        source=desc,
        fact_exports=exports,
        hierarchy_relations=frozenset(hierarchy),
    )


def load_graph(desc: DataSourceDescriptor) -> KnowledgeGraph:
    """从数据源加载图谱；同一文件重复加载得到相同的图"""
    path = Path(desc.uri)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise GraphStoreError(f"读取图谱文件失败: {e}", code="io-error")
    try:
        # JSON 是 YAML 的子集，两种格式都用 safe_load 解析
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise GraphStoreError(f"解析图谱文件 {path} 失败: {e}")
    graph = parse_graph(data or {}, desc)
    logger.info(f"已加载图谱 {graph.kg_id}: {len(graph.nodes)} 个节点, {len(graph.edges)} 条边")
    return graph


def serialize_graph(graph: KnowledgeGraph) -> dict:
    return {
        "kg_id": graph.kg_id,
        "hierarchy_relations": sorted(graph.hierarchy_relations),
        "facts": {kind: export.to_dict() for kind, export in sorted(graph.fact_exports.items())},
        "nodes": [n.to_dict() for n in graph.nodes],
        "edges": [e.to_dict() for e in graph.edges],
    }


class GraphRegistry:
    """按 kg_id 管理图谱快照，注册与替换对并发查询是原子的"""

    def __init__(self):
        self._lock = threading.Lock()
        self._graphs: Mapping[str, KnowledgeGraph] = MappingProxyType({})

    def register_graph(self, graph: KnowledgeGraph, replace: bool = False) -> "GraphRegistry":
        with self._lock:
            if graph.kg_id in self._graphs and not replace:
                raise GraphStoreError(f"图谱 {graph.kg_id} 已注册", code="duplicate-kg-id")
            # 写时复制，读者总是看到完整的快照
            self._graphs = MappingProxyType({**self._graphs, graph.kg_id: graph})
        logger.info(f"图谱 {graph.kg_id} 已注册")
        return self

    def get(self, kg_id: str) -> KnowledgeGraph:
        graph = self._graphs.get(kg_id)
        if graph is None:
            raise GraphStoreError(f"未注册的图谱: {kg_id}", code="unknown-kg")
        return graph

    def __contains__(self, kg_id: str) -> bool:
        return kg_id in self._graphs

    def ids(self) -> list[str]:
        return sorted(self._graphs)

    def snapshot(self) -> Mapping[str, KnowledgeGraph]:
        return self._graphs
