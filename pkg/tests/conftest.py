import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evalmine.gateway import CallableBackend, GatewayConfig, LlmGateway


def make_gateway(responder, max_in_flight=1, retry_limit=0, serial=True) -> LlmGateway:
    config = GatewayConfig(base_url="mock://test", model_id="test",
                           max_in_flight=max_in_flight, retry_limit=retry_limit)
    return LlmGateway(CallableBackend(responder, serial=serial), config,
                      sleep=lambda _: None)


class CountingBackend:
    """Backend wrapper that counts calls; used to assert call budgets."""

    serial = True

    def __init__(self, responder):
        self.responder = responder
        self.calls = 0
        self.prompts = []

    def complete(self, prompt: str) -> str:
        self.calls += 1
        self.prompts.append(prompt)
        return self.responder(prompt)


@pytest.fixture
def counting_gateway():
    def build(responder, **kwargs):
        backend = CountingBackend(responder)
        config = GatewayConfig(base_url="mock://test", model_id="test",
                               max_in_flight=kwargs.get("max_in_flight", 1),
                               retry_limit=kwargs.get("retry_limit", 0))
        return LlmGateway(backend, config, sleep=lambda _: None), backend
    return build
