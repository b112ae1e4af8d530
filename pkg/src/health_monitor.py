import asyncio
import logging
import time
from typing import Optional

from .config import Config
from .gateway import Gateway

logger = logging.getLogger(__name__)


class HealthMonitor:
    """AI服务健康监控器"""

    def __init__(self, config: Config, gateway: Gateway):
        self.config = config
        self.gateway = gateway
        self.running = False
        self.monitor_task: Optional[asyncio.Task] = None
        self.last_check_time = 0.0
        self.consecutive_failures: dict[str, int] = {}
        self.last_status: dict[str, dict] = {}
        self.max_failures = 3  # 连续失败3次后报错

    async def start(self):
        """启动健康监控"""
        if self.running:
            logger.warning("健康监控已在运行")
            return

        logger.info(
            f"正在启动健康监控，检查间隔: {self.config.health_check_interval}秒"
        )
        self.running = True
        self.monitor_task = asyncio.create_task(self._monitor_loop())

    async def stop(self):
        """停止健康监控"""
        if not self.running:
            return

        logger.info("正在停止健康监控...")
        self.running = False

        if self.monitor_task:
            self.monitor_task.cancel()
            try:
                await self.monitor_task
            except asyncio.CancelledError:
                pass
            self.monitor_task = None

        logger.info("健康监控已停止")

    async def _monitor_loop(self):
        """监控循环"""
        while self.running:
            try:
                await self._perform_health_check()
                await asyncio.sleep(self.config.health_check_interval)
            except asyncio.CancelledError:
                break
            except Exception as e:
                logger.error(f"健康检查过程中出现错误: {e}")
                await asyncio.sleep(60)  # 出错时等待1分钟再继续

    async def _perform_health_check(self):
        """探测所有已注册的AI服务"""
        logger.debug("正在执行健康检查...")
        self.last_check_time = time.time()

        statuses = await self.gateway.check_services()
        # 已被重新加载移除的服务不再跟踪
        self.consecutive_failures = {
            k: v for k, v in self.consecutive_failures.items() if k in statuses
        }
        for service_id, status in statuses.items():
            if status.healthy:
                if self.consecutive_failures.get(service_id):
                    logger.info(f"服务 {service_id} 已恢复")
                self.consecutive_failures[service_id] = 0
                continue

            failures = self.consecutive_failures.get(service_id, 0) + 1
            self.consecutive_failures[service_id] = failures
            logger.warning(
                f"服务 {service_id} 健康检查失败: {status.reason} "
                f"(连续失败: {failures}/{self.max_failures})"
            )
            if failures == self.max_failures:
                logger.error(f"服务 {service_id} 连续 {failures} 次不健康，依赖它的查询将失败")

        self.last_status = {k: v.to_dict() for k, v in statuses.items()}
        if all(s.healthy for s in statuses.values()):
            logger.debug("健康检查通过")

    def get_status(self) -> dict:
        """获取监控状态"""
        return {
            "running": self.running,
            "last_check_time": self.last_check_time,
            "services": {
                service_id: {**status, "consecutive_failures": self.consecutive_failures.get(service_id, 0)}
                for service_id, status in sorted(self.last_status.items())
            },
        }
