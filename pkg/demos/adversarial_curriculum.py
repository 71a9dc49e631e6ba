"""Short DR vs VADRA comparison on ShapeColor at equal render budget."""
import sys
import tempfile
from pathlib import Path

import numpy as np

from advrand import harness
from advrand import policy as P

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 40
root = Path(tempfile.mkdtemp(prefix="curriculum-"))
dirs = []
for name in ("taskA-dr", "taskA-vadra"):
    for seed in (0, 1):
        out = root / f"{name}-{seed}"
        harness.run_experiment(harness.load_config(name, seed=seed, out=str(out), iterations=iters))
        dirs.append(out)

rows = harness.compare(dirs, root / "curves.csv")
for r in rows[:: max(1, iters // 8)] + [rows[-1]]:
    print(f"iter {r['iter']:4d}  dr {r['dr_mean']:.3f}  vadra {r['vadra_mean']:.3f}")
pi = P.load_policy(root / "taskA-vadra-0" / "policy.npz")
print("size marginal of the learned policy:", np.round(P.marginal(pi, 3), 3))
print("outputs in", root)
