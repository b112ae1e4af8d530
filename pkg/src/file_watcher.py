"""配置文件监控模块

轮询平台配置文件及其引用的知识图谱文件的修改时间，任一变更即触发回调。
"""

import asyncio
import logging
import os
from typing import Awaitable, Callable, Iterable, Optional, Union

logger = logging.getLogger(__name__)


def _mtime(path: str) -> Optional[float]:
    try:
        return os.path.getmtime(path)
    except OSError:
        return None


class FileWatcher:
    """文件变更监控器"""

    def __init__(
        self,
        paths: Union[str, Iterable[str]],
        callback: Union[Callable[[], None], Callable[[], Awaitable[None]]],
        interval: float = 2.0,
    ):
        self.callback = callback
        self.interval = interval
        self._running = False
        self._task: Optional[asyncio.Task] = None
        self._mtimes: dict[str, Optional[float]] = {}
        self.set_paths([paths] if isinstance(paths, str) else paths)

    @property
    def paths(self) -> list[str]:
        return sorted(self._mtimes)

    def set_paths(self, paths: Iterable[str]) -> None:
        """替换监控的文件集合（重新加载后图谱文件可能增减）"""
        self._mtimes = {str(p): _mtime(str(p)) for p in paths}

    async def start(self):
        """开始监控文件"""
        if self._running:
            return

        missing = [p for p, m in self._mtimes.items() if m is None]
        if missing:
            logger.warning(f"监控的文件不存在: {', '.join(missing)}")

        self._running = True
        self._task = asyncio.create_task(self._watch_loop())
        logger.info(f"开始监控 {len(self._mtimes)} 个文件")

    async def stop(self):
        """停止监控"""
        self._running = False
        if self._task:
            self._task.cancel()
            try:
                await self._task
            except asyncio.CancelledError:
                pass
            self._task = None
        logger.info("停止监控配置文件")

    async def check_once(self) -> bool:
        """检查一次，有变更时调用回调并返回 True"""
        changed = []
        for path, last in self._mtimes.items():
            current = _mtime(path)
            if current != last:
                changed.append(path)
                self._mtimes[path] = current
        if not changed:
            return False

        logger.info(f"检测到文件变更: {', '.join(changed)}")
        try:
            if asyncio.iscoroutinefunction(self.callback):
                await self.callback()
            else:
                await asyncio.to_thread(self.callback)
        except Exception as e:
            logger.error(f"处理文件变更回调失败: {e}")
        return True

    async def _watch_loop(self):
        """监控循环"""
        while self._running:
            try:
                await self.check_once()
                await asyncio.sleep(self.interval)
            except asyncio.CancelledError:
                break
            except Exception as e:
                logger.error(f"文件监控异常: {e}")
                await asyncio.sleep(self.interval * 2)
