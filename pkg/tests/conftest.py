"""共享测试夹具"""

import dataclasses
from pathlib import Path

import pytest

from src.gateway import Gateway, build_runtime
from src.models import Prompt, UserContext
from src.platform_config import PlatformConfig, load_config

ROOT = Path(__file__).resolve().parent.parent
CONFIG_PATH = ROOT / "config" / "banking.yaml"
KG_DIR = ROOT / "config" / "kg"
FIXTURES_DIR = Path(__file__).resolve().parent / "fixtures"

BANKING_PROMPT = (
    "Transferring funds from my savings account to a Fixed Deposit, "
    "what are the limits and applicable fees?"
)
R1 = "Customer XXX has greater than ₹100,000 in his saving account"
R2 = (
    "There are 2 FDs offered with a minimum deposit amount of ₹100,000 "
    "for 366 days and 444 days with an interest rate of 8.65%"
)
R3 = "Charges for transfer of amount from Saving account to FD is 1% for NEFT/RTGS"
FINAL_TEXT = (
    f"{R1}. {R2}. {R3}. You have sufficient balance for the FD transfer. "
    "The daily limit is ₹100,000, with a 1% fee for NEFT/RTGS transfers. "
    "Proceed with the transfer, and the applicable charges will be automatically deducted."
)


def retail_context(user_id: str = "XXX") -> UserContext:
    return UserContext(user_id=user_id, role="retail-customer", attributes={"account-type": "saving"})


def banking_prompt(user_id: str = "XXX", text: str = BANKING_PROMPT) -> Prompt:
    return Prompt(text=text, context=retail_context(user_id))


def without_latency(config: PlatformConfig) -> PlatformConfig:
    """去掉 mock 服务的模拟延迟"""
    services = tuple(dataclasses.replace(s, simulated_latency=None) for s in config.services)
    return dataclasses.replace(config, services=services)


@pytest.fixture
def banking_config() -> PlatformConfig:
    return load_config(str(CONFIG_PATH))


@pytest.fixture
def gateway(banking_config) -> Gateway:
    """模拟延迟为 50ms 的网关"""
    return Gateway(build_runtime(banking_config))


@pytest.fixture
def fast_gateway(banking_config) -> Gateway:
    """无模拟延迟的网关"""
    return Gateway(build_runtime(without_latency(banking_config)))
