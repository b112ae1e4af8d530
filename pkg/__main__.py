#!/usr/bin/env python3
"""
RelayRAG 主入口点
"""
import sys
import argparse
import json
import logging
import os
import asyncio
from pathlib import Path
from dotenv import load_dotenv

# 加载.env文件
load_dotenv()

# 添加src目录到Python路径
sys.path.insert(0, str(Path(__file__).parent / "src"))

# 现在可以导入src模块
from src.app import RelayRagApp  # noqa: E402
from src.bench import Scenario, load_fixtures, run_bench  # noqa: E402
from src.config import Config  # noqa: E402
from src.errors import RelayError  # noqa: E402
from src.gateway import Gateway  # noqa: E402
from src.platform_config import load_config, load_graphs  # noqa: E402
from src.utils import parse_scalar  # noqa: E402


def setup_logging(verbose: bool = False):
    """设置日志配置"""
    level = logging.DEBUG if verbose else logging.INFO

    # 如果环境变量中有LOG_LEVEL，优先使用
    if "LOG_LEVEL" in os.environ:
        level_str = os.environ["LOG_LEVEL"].upper()
        if level_str == "DEBUG":
            level = logging.DEBUG
        elif level_str == "INFO":
            level = logging.INFO
        elif level_str == "WARNING":
            level = logging.WARNING
        elif level_str == "ERROR":
            level = logging.ERROR

    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stdout)]
    )

    # 访问日志过于频繁
    if not verbose:
        logging.getLogger("aiohttp.access").setLevel(logging.WARNING)


def _print_json(data):
    print(json.dumps(data, ensure_ascii=False, indent=2))


def _parse_attr(raw: str):
    """k=v；能原样写回的整数和小数转换为数值"""
    if "=" not in raw:
        raise argparse.ArgumentTypeError(f"属性格式应为 key=value: {raw}")
    key, value = raw.split("=", 1)
    return key, parse_scalar(value)


async def run_serve(config: Config):
    """运行HTTP服务"""
    app = RelayRagApp(config)

    try:
        # 设置信号处理
        app.setup_signal_handlers()

        # 初始化并启动
        await app.initialize()
        await app.start()

    except KeyboardInterrupt:
        logging.info("收到中断信号")
    except Exception as e:
        logging.error(f"应用运行失败: {e}")
        sys.exit(1)
    finally:
        await app.stop()


async def run_query(config: Config, args) -> int:
    gateway = Gateway.from_path(config.platform_config_path)
    result = await gateway.handle_query({
        "user_id": args.user,
        "role": args.role,
        "attributes": dict(args.attr or []),
        "prompt": args.prompt,
        "verbose": args.trace,
    })
    _print_json(result)
    return 1 if "error" in result else 0


async def run_benchmarks(config: Config, args) -> int:
    gateway = Gateway.from_path(config.platform_config_path)
    fixtures = args.fixtures or gateway.config.bench_fixtures
    if not fixtures:
        logging.error("没有可用的基准夹具，请使用 --fixtures 或在配置中声明 bench.fixtures")
        return 1
    queries = load_fixtures(fixtures)
    repetitions = args.repetitions or gateway.config.bench_repetitions
    scenarios = list(Scenario) if args.scenario == "all" else [Scenario(args.scenario)]
    reports = [(await run_bench(gateway, s, queries, repetitions)).to_dict() for s in scenarios]
    _print_json(reports if len(reports) > 1 else reports[0])
    return 0


def validate_config(config: Config) -> int:
    platform = load_config(config.platform_config_path)
    graphs = load_graphs(platform)
    summary = platform.summary()
    summary["loaded_graphs"] = graphs.ids()
    _print_json(summary)
    return 0


def main():
    """主函数"""
    parser = argparse.ArgumentParser(
        description="RelayRAG: 多AI服务编排的检索增强问答平台"
    )
    parser.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="启用详细日志输出"
    )
    parser.add_argument(
        "--config",
        help="平台配置文件路径（覆盖 RELAY_CONFIG）"
    )
    commands = parser.add_subparsers(dest="command")

    commands.add_parser("serve", help="启动HTTP服务（默认）")

    query = commands.add_parser("query", help="执行一次查询")
    query.add_argument("--user", required=True, help="用户ID")
    query.add_argument("--role", required=True, help="用户角色")
    query.add_argument("--attr", action="append", type=_parse_attr, metavar="KEY=VALUE", help="用户属性，可重复")
    query.add_argument("--trace", action="store_true", help="输出执行追踪")
    query.add_argument("prompt", help="提示文本")

    bench = commands.add_parser("bench", help="运行基准测试")
    bench.add_argument(
        "--scenario",
        choices=[s.value for s in Scenario] + ["all"],
        default="all",
        help="场景"
    )
    bench.add_argument("--repetitions", type=int, help="每条查询的重复次数")
    bench.add_argument("--fixtures", help="基准夹具文件")

    commands.add_parser("validate-config", help="校验平台配置与知识图谱文件")

    args = parser.parse_args()

    # 设置日志
    setup_logging(args.verbose)

    # 设置环境变量
    if args.verbose:
        os.environ["VERBOSE"] = "true"

    try:
        config = Config(args.config)
        command = args.command or "serve"
        if command == "serve":
            asyncio.run(run_serve(config))
            return
        if command == "query":
            sys.exit(asyncio.run(run_query(config, args)))
        if command == "bench":
            sys.exit(asyncio.run(run_benchmarks(config, args)))
        if command == "validate-config":
            sys.exit(validate_config(config))
    except KeyboardInterrupt:
        logging.info("收到中断信号，正在退出...")
        sys.exit(0)
    except RelayError as e:
        logging.error(f"[{e.stage}/{e.code}] {e.message}")
        for violation in e.details.get("violations", []):
            logging.error(f"  - {violation}")
        sys.exit(1)
    except ValueError as e:
        logging.error(f"配置错误: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
