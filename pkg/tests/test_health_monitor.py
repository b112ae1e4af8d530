import pytest
from unittest.mock import Mock, AsyncMock
from src.ai_services import HealthStatus
from src.config import Config
from src.gateway import Gateway
from src.health_monitor import HealthMonitor


@pytest.fixture
def mock_config():
    """模拟配置"""
    config = Mock(spec=Config)
    config.health_check_interval = 1  # 1秒用于测试
    return config


@pytest.fixture
def mock_gateway():
    """模拟网关"""
    gateway = Mock(spec=Gateway)
    gateway.check_services = AsyncMock(return_value={
        "accounts-ai": HealthStatus(True),
        "deposits-ai": HealthStatus(True),
    })
    return gateway


@pytest.fixture
def health_monitor(mock_config, mock_gateway):
    """健康监控实例"""
    return HealthMonitor(mock_config, mock_gateway)


class TestHealthMonitor:
    """健康监控测试"""

    @pytest.mark.asyncio
    async def test_start_stop(self, health_monitor):
        """测试启动和停止"""
        assert not health_monitor.running

        # 启动
        await health_monitor.start()
        assert health_monitor.running
        assert health_monitor.monitor_task is not None

        # 停止
        await health_monitor.stop()
        assert not health_monitor.running
        assert health_monitor.monitor_task is None

    @pytest.mark.asyncio
    async def test_health_check_success(self, health_monitor, mock_gateway):
        """测试健康检查成功"""
        await health_monitor._perform_health_check()

        mock_gateway.check_services.assert_awaited_once()
        assert health_monitor.consecutive_failures == {"accounts-ai": 0, "deposits-ai": 0}
        assert health_monitor.last_check_time > 0

    @pytest.mark.asyncio
    async def test_health_check_failure(self, health_monitor, mock_gateway):
        """测试连续失败计数"""
        mock_gateway.check_services.return_value = {
            "accounts-ai": HealthStatus(True),
            "deposits-ai": HealthStatus(False, "timeout"),
        }
        for _ in range(3):
            await health_monitor._perform_health_check()

        assert health_monitor.consecutive_failures["deposits-ai"] == 3
        assert health_monitor.consecutive_failures["accounts-ai"] == 0

    @pytest.mark.asyncio
    async def test_recovery_resets_counter(self, health_monitor, mock_gateway):
        """测试恢复后计数清零"""
        mock_gateway.check_services.return_value = {"deposits-ai": HealthStatus(False, "timeout")}
        await health_monitor._perform_health_check()
        assert health_monitor.consecutive_failures["deposits-ai"] == 1

        mock_gateway.check_services.return_value = {"deposits-ai": HealthStatus(True)}
        await health_monitor._perform_health_check()
        assert health_monitor.consecutive_failures["deposits-ai"] == 0

    @pytest.mark.asyncio
    async def test_removed_service_is_forgotten(self, health_monitor, mock_gateway):
        """测试重新加载后移除的服务不再跟踪"""
        await health_monitor._perform_health_check()
        mock_gateway.check_services.return_value = {"accounts-ai": HealthStatus(True)}
        await health_monitor._perform_health_check()

        assert "deposits-ai" not in health_monitor.consecutive_failures
        assert set(health_monitor.get_status()["services"]) == {"accounts-ai"}

    @pytest.mark.asyncio
    async def test_get_status(self, health_monitor, mock_gateway):
        """测试获取状态"""
        mock_gateway.check_services.return_value = {"deposits-ai": HealthStatus(False, "status 503")}
        await health_monitor._perform_health_check()

        status = health_monitor.get_status()
        assert status["running"] is False
        assert status["services"]["deposits-ai"] == {
            "healthy": False,
            "reason": "status 503",
            "consecutive_failures": 1,
        }
