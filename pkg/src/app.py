import asyncio
import logging
import signal
from typing import Optional

from aiohttp import web

from .config import Config
from .file_watcher import FileWatcher
from .gateway import Gateway
from .health_monitor import HealthMonitor
from .server import create_app

logger = logging.getLogger(__name__)


class RelayRagApp:
    """主应用程序类"""

    def __init__(self, config: Optional[Config] = None):
        self.config = config or Config()
        self.gateway: Optional[Gateway] = None
        self.health_monitor: Optional[HealthMonitor] = None
        self.file_watcher: Optional[FileWatcher] = None
        self.runner: Optional[web.AppRunner] = None
        self.running = False

    async def initialize(self):
        """初始化所有组件"""
        logger.info("正在初始化RelayRAG应用...")

        try:
            self.gateway = await asyncio.to_thread(Gateway.from_path, self.config.platform_config_path)

            self.health_monitor = HealthMonitor(self.config, self.gateway)

            if self.config.watch_config:
                self.file_watcher = FileWatcher(self._watched_paths(), self._on_config_changed)

            self.runner = web.AppRunner(create_app(self.gateway, self.health_monitor))
            await self.runner.setup()

            logger.info("所有组件初始化完成")

        except Exception as e:
            logger.error(f"初始化失败: {e}")
            raise

    def _watched_paths(self) -> list[str]:
        config = self.gateway.config
        return [config.path or self.config.platform_config_path] + [d.uri for d in config.kg_sources]

    async def start(self, block: bool = True):
        """启动应用"""
        if self.running:
            logger.warning("应用已在运行")
            return

        logger.info("正在启动RelayRAG应用...")
        self.running = True

        try:
            site = web.TCPSite(self.runner, self.config.host, self.config.port)
            await site.start()

            await self.health_monitor.start()

            if self.file_watcher:
                await self.file_watcher.start()

            logger.info(f"RelayRAG应用已启动，HTTP监听 {self.config.host}:{self.config.port}")

            # 保持运行
            while block and self.running:
                await asyncio.sleep(1)

        except Exception as e:
            logger.error(f"运行时错误: {e}")
            raise

    async def stop(self):
        """停止应用"""
        if not self.running:
            return

        logger.info("正在停止RelayRAG应用...")
        self.running = False

        if self.health_monitor:
            await self.health_monitor.stop()

        if self.file_watcher:
            await self.file_watcher.stop()

        if self.runner:
            await self.runner.cleanup()

        logger.info("RelayRAG应用已停止")

    async def _on_config_changed(self):
        """配置文件变更回调"""
        try:
            logger.info("检测到配置文件变更，正在重新加载...")
            await self.gateway.reload()
            if self.file_watcher:
                self.file_watcher.set_paths(self._watched_paths())
        except Exception as e:
            logger.error(f"重新加载配置失败，继续使用旧配置: {e}")

    def setup_signal_handlers(self):
        """设置信号处理器"""
        def signal_handler(signum, frame):
            logger.info(f"收到信号 {signum}，正在优雅关闭...")
            asyncio.create_task(self.stop())

        signal.signal(signal.SIGINT, signal_handler)
        signal.signal(signal.SIGTERM, signal_handler)
