from __future__ import annotations

import threading
import time

import pytest
import uvicorn
from fastapi.testclient import TestClient

from apex.config import ApexConfig
from apex.gateway import create_app

TEST_SECRET_HEX = "7f" * 32
TEST_SECRET = bytes.fromhex(TEST_SECRET_HEX)


def make_config(tmp_path, **overrides) -> ApexConfig:
    cfg = ApexConfig(
        secret=TEST_SECRET,
        db_path=str(tmp_path / "ledger.db"),
        log_path=str(tmp_path / "logs.json"),
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture
def cfg(tmp_path) -> ApexConfig:
    return make_config(tmp_path)


@pytest.fixture
def app(cfg):
    return create_app(cfg)


@pytest.fixture
def tc(app) -> TestClient:
    return TestClient(app)


class LiveServer:
    """uvicorn in a daemon thread on an ephemeral port."""

    def __init__(self, app):
        self._server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=0,
                           log_level="warning", access_log=False)
        )
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.base_url = ""

    def start(self) -> "LiveServer":
        self._thread.start()
        deadline = time.time() + 15
        while not self._server.started:
            if time.time() > deadline:
                raise RuntimeError("server did not start")
            time.sleep(0.01)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        self.base_url = f"http://127.0.0.1:{port}"
        return self

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=15)


@pytest.fixture
def live_server(cfg):
    server = LiveServer(create_app(cfg)).start()
    yield server
    server.stop()


# verdict lines from the acceptance gate; echoed after the test summary so
# they survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance gate")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)
