import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wildspread.geo import GridSpec  # noqa: E402
from wildspread.stacking import DEFAULT_SCHEMA, LayerStack  # noqa: E402

T0 = datetime(2014, 9, 13, tzinfo=timezone.utc)


def make_stack(height, width, seed=0, t=T0, mask=None, schema=DEFAULT_SCHEMA):
    rng = np.random.default_rng(seed)
    C = schema.channel_count
    data = rng.uniform(0, 1, (C, height, width))
    if mask is None:
        mask = rng.random((height, width)) < 0.3
    data[schema.fire_mask_index] = np.asarray(mask, dtype=np.float64)
    spec = GridSpec(500000.0, 4200000.0, width, height, 30.0, "EPSG:32610")
    return LayerStack(t, spec, schema, data, norm={n: (0.0, 1.0) for n in schema.names})


def make_pair(height, width, seed=0, **kw):
    a = make_stack(height, width, seed, T0, **kw)
    b = make_stack(height, width, seed + 1, T0 + timedelta(days=1), **kw)
    return a, b


def make_store(path, n=7, count=60, seed=0, fire_id="fire", height=16, width=16, fractions=(0.8, 0.1, 0.1)):
    """Small sample store drawn from a random stack pair."""
    from wildspread.sampling import sample_pois, write_store

    a, b = make_pair(height, width, seed=seed)
    samples = sample_pois(a, b, count, seed=seed, fire_id=fire_id, n=n)
    return write_store(samples, path, seed=seed, split_fractions=fractions, schema=a.schema).path


MINI_LAYOUT = [["conv", 3, 4], ["maxpool", 2, None], ["flatten", None, None],
               ["dense", None, 8], ["dense", None, 1]]


# --- acceptance reporting ---------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    key = (number, title)
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _ACCEPTANCE.get(key, "PASS")
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        if prev == "FAIL":
            status = "FAIL"
        _ACCEPTANCE[key] = status


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}")
