"""统一异常定义

每个异常携带稳定的机器可读错误码(code)和所在流水线阶段(stage)，
网关据此生成 {stage, code, message} 结构化错误文档。
"""

from typing import Any, Mapping, Optional


class RelayError(Exception):
    """所有业务异常的基类"""

    stage = "internal"
    code = "internal-error"

    def __init__(
        self,
        message: str,
        *,
        code: Optional[str] = None,
        stage: Optional[str] = None,
        details: Optional[Mapping[str, Any]] = None,
    ):
        super().__init__(message)
        self.message = message
        if code:
            self.code = code
        if stage:
            self.stage = stage
        self.details = dict(details) if details else {}

    def to_document(self) -> dict:
        """转换为结构化错误文档"""
        document: dict[str, Any] = {
            "stage": self.stage,
            "code": self.code,
            "message": self.message,
        }
        if self.details:
            document["details"] = self.details
        return document


class ModelValidationError(RelayError, ValueError):
    """领域对象构造时违反不变量"""

    stage = "request"
    code = "invalid-field"


class ContextError(RelayError):
    stage = "context"
    code = "invalid-context"


class ConfigError(RelayError):
    stage = "config"
    code = "parse-error"


class DecompositionError(RelayError):
    stage = "decompose"
    code = "no-intent-matched"


class RuleError(RelayError):
    stage = "plan"
    code = "no-rule-matched"


class BindError(RelayError):
    stage = "execute"
    code = "unresolved-placeholder"


class GraphStoreError(RelayError):
    stage = "graph"
    code = "schema-error"


class ServiceError(RelayError):
    stage = "service"
    code = "template-fact-missing"


class ServiceUnavailableError(ServiceError):
    """HTTP适配器连接失败、超时或应答格式错误"""

    code = "service-unavailable"


class PlanError(RelayError):
    stage = "plan"
    code = "cycle-detected"


class AggregationError(RelayError):
    stage = "aggregate"
    code = "missing-fact-for-conclusion-template"


class ExecutionError(RelayError):
    """子提示执行失败，整体请求失败（不返回部分答案）"""

    stage = "execute"

    def __init__(self, cause: Exception, *, plan_stage: int, sub_prompt_id: int):
        code = getattr(cause, "code", "internal-error")
        message = (
            f"第 {plan_stage} 阶段子提示 P{sub_prompt_id} 执行失败: "
            f"{getattr(cause, 'message', None) or cause}"
        )
        super().__init__(
            message,
            code=code,
            details={"plan_stage": plan_stage, "sub_prompt_id": sub_prompt_id},
        )
        self.cause = cause
        self.plan_stage = plan_stage
        self.sub_prompt_id = sub_prompt_id


class BenchError(RelayError):
    stage = "bench"
    code = "fixture-missing-golden-answer"
