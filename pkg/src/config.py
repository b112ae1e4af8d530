import os
import logging
from dataclasses import dataclass
from typing import Optional


@dataclass
class Config:
    """进程级配置（环境变量）

    平台数据（意图、规则、知识图谱、服务）在 RELAY_CONFIG 指向的 YAML 文件中，
    见 platform_config。
    """

    # 平台配置文件
    platform_config_path: str = "config/banking.yaml"

    # HTTP服务
    host: str = "0.0.0.0"
    port: int = 8080

    # 本地配置
    health_check_interval: int = 600  # 10分钟
    watch_config: bool = True
    verbose: bool = False  # 详细日志输出

    def __init__(self, platform_config_path: Optional[str] = None):
        # 命令行参数优先于环境变量
        self.platform_config_path = (
            platform_config_path or os.getenv("RELAY_CONFIG") or self.platform_config_path
        )
        self.host = os.getenv("RELAY_HOST", self.host)
        self.port = self._get_env_int("RELAY_PORT", self.port)
        self.health_check_interval = self._get_env_int("HEALTH_CHECK_INTERVAL", self.health_check_interval)
        self.watch_config = self._get_env_bool("WATCH_CONFIG", self.watch_config)
        self.verbose = self._get_env_bool("VERBOSE", self.verbose)

        if not 0 < self.port < 65536:
            raise ValueError(f"无效的RELAY_PORT: {self.port}")
        if self.health_check_interval <= 0:
            raise ValueError(f"HEALTH_CHECK_INTERVAL 必须为正数: {self.health_check_interval}")

        logging.debug(f"平台配置文件: {self.platform_config_path}")

    def _get_env_int(self, key: str, default: int) -> int:
        """读取整数环境变量"""
        value = os.getenv(key)
        if value is None or value == "":
            return default
        try:
            return int(value)
        except ValueError:
            raise ValueError(f"环境变量 {key} 必须是整数: {value}")

    def _get_env_bool(self, key: str, default: bool) -> bool:
        value = os.getenv(key)
        if value is None or value == "":
            return default
        return value.lower() in ("true", "1", "yes")
