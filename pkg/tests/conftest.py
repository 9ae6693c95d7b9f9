# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import os

import pytest

import pafi.log as ops_log
from pafi import metrics
from pafi.config import get_cfg, reload_cfg
from pafi.numerics import allow_nonfinite

from utils import tiny_config, tiny_store, tiny_task


@pytest.fixture(autouse=True)
def _reset_cfg_between_tests(monkeypatch):
    for k in tuple(os.environ):
        if k.startswith("PAFI_"):
            monkeypatch.delenv(k, raising=False)
    reload_cfg()
    allow_nonfinite(False)
    metrics.reset()
    yield
    ops_log.configure(None)
    allow_nonfinite(False)


@pytest.fixture()
def cfg():
    return get_cfg()


@pytest.fixture()
def config():
    return tiny_config()


@pytest.fixture()
def theta(config):
    return tiny_store(config, seed=0)


@pytest.fixture()
def task():
    return tiny_task()
