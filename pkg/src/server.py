"""HTTP接口

POST /query    提问
GET  /metrics  缓存、延迟与步数指标
GET  /health   服务健康状态
POST /bench    运行基准测试
"""

import json
import logging
from typing import Optional

from aiohttp import web

from .bench import Scenario, load_fixtures, run_bench
from .errors import ModelValidationError, RelayError
from .gateway import Gateway, status_for
from .health_monitor import HealthMonitor

logger = logging.getLogger(__name__)

GATEWAY_KEY = web.AppKey("gateway", Gateway)
MONITOR_KEY = web.AppKey("health_monitor", HealthMonitor)


def _json(data: dict, status: int = 200) -> web.Response:
    return web.json_response(data, status=status, dumps=lambda d: json.dumps(d, ensure_ascii=False))


def _error(e: RelayError) -> web.Response:
    document = {"error": e.to_document()}
    return _json(document, status_for(document))


async def _read_json(request: web.Request) -> dict:
    try:
        body = await request.json()
    except ValueError:
        raise ModelValidationError("请求体不是合法JSON", code="invalid-request")
    if not isinstance(body, dict):
        raise ModelValidationError("请求体必须是JSON对象", code="invalid-request")
    return body


async def handle_query(request: web.Request) -> web.Response:
    gateway = request.app[GATEWAY_KEY]
    try:
        body = await _read_json(request)
    except RelayError as e:
        gateway.metrics.record_error(e.code)
        return _error(e)
    result = await gateway.handle_query(body)
    return _json(result, status_for(result))


async def handle_metrics(request: web.Request) -> web.Response:
    return _json(request.app[GATEWAY_KEY].get_metrics())


async def handle_health(request: web.Request) -> web.Response:
    gateway = request.app[GATEWAY_KEY]
    statuses = await gateway.check_services()
    healthy = all(s.healthy for s in statuses.values())
    data = {
        "status": "ok" if healthy else "degraded",
        "services": {service_id: s.to_dict() for service_id, s in statuses.items()},
        "config": gateway.config.summary(),
    }
    monitor = request.app.get(MONITOR_KEY)
    if monitor is not None:
        data["monitor"] = monitor.get_status()
    return _json(data)


async def handle_bench(request: web.Request) -> web.Response:
    gateway = request.app[GATEWAY_KEY]
    try:
        body = await _read_json(request)
        try:
            scenario = Scenario(body.get("scenario", Scenario.CACHE_AND_RULES.value))
        except ValueError:
            raise ModelValidationError(
                f"未知的场景: {body.get('scenario')}（可选 {', '.join(s.value for s in Scenario)}）",
                code="invalid-request",
            )
        repetitions = body.get("repetitions", gateway.config.bench_repetitions)
        if not isinstance(repetitions, int) or repetitions < 1:
            raise ModelValidationError("repetitions 必须是正整数", code="invalid-request")
        fixtures = gateway.config.bench_fixtures
        if not fixtures:
            raise RelayError("配置没有声明 bench.fixtures", stage="bench", code="fixtures-not-configured")
        queries = load_fixtures(fixtures)
        report = await run_bench(gateway, scenario, queries, repetitions)
    except RelayError as e:
        return _error(e)
    return _json(report.to_dict())


def create_app(gateway: Gateway, health_monitor: Optional[HealthMonitor] = None) -> web.Application:
    app = web.Application()
    app[GATEWAY_KEY] = gateway
    if health_monitor is not None:
        app[MONITOR_KEY] = health_monitor
    app.router.add_post("/query", handle_query)
    app.router.add_get("/metrics", handle_metrics)
    app.router.add_get("/health", handle_health)
    app.router.add_post("/bench", handle_bench)
    return app
