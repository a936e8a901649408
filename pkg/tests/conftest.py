from __future__ import annotations

import pytest

SMALL_CFG = """\
[run]
T = 0.125
dt = 0.00390625
eta = 1.0
M_hat = 1.5
coupling = per_step
dealias = false

[grid]
n_u = 8
n_t = 32

[noise]
c = 0.07

[mc]
replicas = 6
eps = 1e-3, 1e-2, 1e-1
base_seed = 99
fit_paths = 200

[probe]
n_probes = 12
pairs = 3
n_u = 6
T = 0.25
dt = 0.015625

[oracle]
n_modes = 64
paths = 400
steps = 256
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CFG)
    return path
