import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.getcwd(), "src"))


@pytest.fixture(autouse=True)
def _isolated_run_log(tmp_path, monkeypatch):
    # Keep CLI tests from appending to the real ~/.local/state log.
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "state"))
