"""平台配置加载与校验测试"""

import copy

import pytest
import yaml

from src.errors import ConfigError
from src.platform_config import load_config, load_graphs, parse_config
from src.semantic_cache import CachePolicy

from tests.conftest import CONFIG_PATH, KG_DIR


@pytest.fixture(scope="module")
def raw_config() -> dict:
    return yaml.safe_load(CONFIG_PATH.read_text(encoding="utf-8"))


def _violations(data) -> list[str]:
    with pytest.raises(ConfigError) as exc_info:
        parse_config(data, CONFIG_PATH)
    return exc_info.value.details["violations"]


class TestBankingConfig:
    """示例配置"""

    def test_loads(self, banking_config):
        assert [s.intent for s in banking_config.intent_catalog.intents] == [
            "account-summary", "fd-catalog", "fees-and-limits",
        ]
        assert [r.rule_id for r in banking_config.rule_set.rules] == ["Rule1", "Rule2", "Rule3"]
        assert [d.kg_id for d in banking_config.kg_sources] == ["KG1", "KG2", "KG3"]
        assert [s.service_id for s in banking_config.services] == [
            "accounts-service", "deposits-service", "policy-service",
        ]
        assert banking_config.cache_policy == CachePolicy(capacity=1024, similarity_threshold=0.8, ttl=None)
        assert banking_config.service_retries == 1
        assert banking_config.retry_base_delay == pytest.approx(0.05)
        assert banking_config.roles == {"retail-customer", "corporate-customer"}
        assert len(banking_config.conclusions) == 2

    def test_paths_are_relative_to_config(self, banking_config):
        assert banking_config.kg_sources[0].uri == str(KG_DIR / "kg1_accounts.yaml")
        assert banking_config.bench_fixtures.endswith("bench/banking_queries.yaml")
        assert banking_config.path == str(CONFIG_PATH.resolve())

    def test_graphs_load(self, banking_config):
        graphs = load_graphs(banking_config)
        assert graphs.ids() == ["KG1", "KG2", "KG3"]

    def test_execution_policy_overrides(self, banking_config):
        policy = banking_config.execution_policy(use_cache=False)
        assert not policy.use_cache
        assert policy.service_retries == 1
        assert policy.conclusions == banking_config.conclusions

    def test_summary(self, banking_config):
        summary = banking_config.summary()
        assert summary["intents"] == 3
        assert summary["knowledge_graphs"] == ["KG1", "KG2", "KG3"]


class TestReferentialIntegrity:
    """交叉引用校验"""

    def test_rule_with_unknown_kg(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["rules"][1]["target_kg"] = "KG9"
        with pytest.raises(ConfigError) as exc_info:
            parse_config(data, CONFIG_PATH)
        assert exc_info.value.code == "referential-integrity-error"
        assert any("KG9" in v for v in exc_info.value.details["violations"])

    def test_all_violations_are_reported(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["rules"][0]["role"] = "guest"
        data["rules"][0]["when"] = {"colour": "red"}
        data["rules"][2]["intent"] = "loans"
        data["services"][2]["domain"] = "deposits"
        violations = _violations(data)
        assert any("guest" in v for v in violations)
        assert any("colour" in v for v in violations)
        assert any("loans" in v for v in violations)
        assert any("deposits" in v for v in violations)
        # policy 领域失去了服务
        assert any("policy" in v for v in violations)

    def test_mock_service_missing_template(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["services"][0]["answer_templates"] = {"fd-catalog": "x"}
        violations = _violations(data)
        assert any("account-summary" in v for v in violations)

    def test_conclusion_with_unknown_intent(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["conclusions"][1]["intents"] = ["account-summary", "mortgages"]
        assert any("mortgages" in v for v in _violations(data))

    def test_duplicate_kg(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["knowledge_graphs"].append({"kg_id": "KG1", "uri": "kg/kg1_accounts.yaml"})
        assert any("KG1" in v for v in _violations(data))

    def test_bad_template_format(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["services"][1]["answer_templates"]["fd-catalog"] = "There are {fd_count FDs"
        assert any("fd-catalog" in v for v in _violations(data))


class TestStructuralErrors:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ConfigError) as exc_info:
            load_config(str(path))
        assert exc_info.value.code == "parse-error"

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("intents: [unclosed", encoding="utf-8")
        with pytest.raises(ConfigError) as exc_info:
            load_config(str(path))
        assert exc_info.value.code == "parse-error"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as exc_info:
            load_config(str(tmp_path / "missing.yaml"))
        assert exc_info.value.code == "io-error"

    def test_intent_cycle(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["intents"][0]["depends_on"] = ["fees-and-limits"]
        with pytest.raises(ConfigError) as exc_info:
            parse_config(data, CONFIG_PATH)
        assert exc_info.value.code == "parse-error"

    def test_bad_cache_section(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["cache"] = {"capacity": 0}
        assert any(v.startswith("cache") for v in _violations(data))

    def test_sections_must_be_lists(self, raw_config):
        data = copy.deepcopy(raw_config)
        data["services"] = {"not": "a list"}
        assert any(v.startswith("services") for v in _violations(data))

    def test_missing_roles(self, raw_config):
        data = copy.deepcopy(raw_config)
        del data["roles"]
        assert any(v.startswith("roles") for v in _violations(data))

    def test_round_trip_through_file(self, tmp_path, raw_config):
        data = copy.deepcopy(raw_config)
        for source in data["knowledge_graphs"]:
            source["uri"] = str(KG_DIR / source["uri"].split("/")[-1])
        data["bench"]["fixtures"] = str(CONFIG_PATH.parent / "bench" / "banking_queries.yaml")
        path = tmp_path / "copy.yaml"
        path.write_text(yaml.safe_dump(data, allow_unicode=True), encoding="utf-8")
        config = load_config(str(path))
        assert [d.uri for d in config.kg_sources] == [str(KG_DIR / f) for f in (
            "kg1_accounts.yaml", "kg2_deposits.yaml", "kg3_policy.yaml",
        )]
