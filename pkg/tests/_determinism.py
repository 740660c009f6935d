"""Run a fixed battery of solves and CLI calls; print digests as JSON.

Invoked in a fresh interpreter by the determinism acceptance test.
"""

import contextlib
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from _graphs import parsing_toy, random_graph, random_scores  # noqa: E402
from structura import cli  # noqa: E402
from structura.admm import AdmmConfig, solve  # noqa: E402

INSTANCES = {
    "xor.json": {"num_variables": 3, "eta": [0.5, 0.3, 0.1],
                 "factors": [{"type": "xor", "vars": [0, 1, 2]}]},
    "mixed.json": {"num_variables": 5, "eta": [0.4, -0.2, 0.9, 0.1, 0.3],
                   "factors": [{"type": "xor", "vars": [0, 1, 2]},
                               {"type": "budget", "vars": [1, 2, 3], "budget": 1},
                               {"type": "pair", "vars": [3, 4], "coupling": 0.7},
                               {"type": "negated", "vars": [0, 4], "mask": [True, False],
                                "inner": {"type": "or"}}]},
}


def main(out: Path):
    mu = hashlib.sha256()
    rng = np.random.default_rng(808)
    solves = 0
    for _ in range(30):
        g = random_graph(rng)
        eta, eta_n = random_scores(rng, g)
        mu.update(solve(g, eta, eta_n, AdmmConfig(gamma=1.0, max_outer=300)).mu.tobytes())
        solves += 1
    g, _, _ = parsing_toy()
    mu.update(solve(g, rng.normal(size=g.num_variables)).mu.tobytes())
    solves += 1

    files = hashlib.sha256()
    for name, doc in INSTANCES.items():
        src = out / name
        src.write_text(json.dumps(doc), encoding="utf-8")
        dst = out / f"{name}.out"
        cli.main(["solve", str(src), "-o", str(dst)])
        files.update(dst.read_bytes())
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            cli.main(["gradcheck", str(src), "--trials", "3", "--eps-primal", "1e-10", "--eps-dual", "1e-10"])
        files.update(buf.getvalue().encode())
    print(json.dumps({"mu": mu.hexdigest(), "files": files.hexdigest(), "solves": solves}))


if __name__ == "__main__":
    main(Path(sys.argv[1]))
