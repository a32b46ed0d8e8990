"""Random 2-D instances for the alpha oracle comparison, with cached oracle values.

    python tests/alpha_instances.py      # recompute fixtures/alpha_oracle.json

Each instance is regenerated from its seed and checked against the stored
hash before the stored oracle value is used.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from oracles import grid_alpha_2d

FIXTURE = Path(__file__).parent / "fixtures" / "alpha_oracle.json"
SEED = 2026
COUNT = 50
GRID = (200, 200, 200)
ORACLE_QUAD = 256


def instances(count: int = COUNT, seed: int = SEED):
    """``count`` unit-mass measures of 8 to 30 atoms inside the unit disc."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        k = int(rng.integers(8, 31))
        rad = 0.98 * np.sqrt(rng.uniform(0, 1, k))
        ang = rng.uniform(0, 2 * np.pi, k)
        pts = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        w = rng.uniform(0.1, 1.0, k)
        out.append((pts, w / w.sum()))
    return out


def digest(pts, w) -> str:
    return hashlib.sha256(np.ascontiguousarray(pts).tobytes() + np.ascontiguousarray(w).tobytes()).hexdigest()


def compute(path: Path = FIXTURE) -> list:
    rows = []
    for i, (pts, w) in enumerate(instances()):
        t = time.time()
        value, line = grid_alpha_2d(pts, w, *GRID, quad=ORACLE_QUAD)
        rows.append(
            {
                "index": i,
                "atoms": len(pts),
                "sha256": digest(pts, w),
                "oracle": value,
                "line": None if line is None else [float(v) for v in line],
                "seconds": time.time() - t,
            }
        )
        print(i, len(pts), value, round(rows[-1]["seconds"], 1), flush=True)
    path.parent.mkdir(exist_ok=True)
    payload = {"seed": SEED, "grid": list(GRID), "quad": ORACLE_QUAD, "instances": rows}
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return rows


def load() -> dict:
    return json.loads(FIXTURE.read_text())


if __name__ == "__main__":
    compute()
