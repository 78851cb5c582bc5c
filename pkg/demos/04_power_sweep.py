"""Monte-Carlo power sweep written as CSV files.

Compares hybrid RSMA with SDMA over three transmit powers on a reduced
instance and writes the summary, per-trial and trace CSVs to demo_out/.
"""

import sys

from nfisac.config import desk_config
from nfisac.experiments import SweepSpec, run_sweep

out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
cfg = desk_config().replace(n_tx=8, n_rf=4, n_users=2, n_targets=1)
spec = SweepSpec("power_dbm", [20, 25, 30], trials=3, schemes=["sdma_hybrid_nf", "rsma_hybrid_nf"])
res = run_sweep(spec, cfg, out)
for r in res.rows:
    print(f"{r['scheme']:>16} {r['value']:>3} dBm: mean {r['mean_rate']:.3f} +- {r['stderr_rate']:.3f} "
          f"bit/s/Hz ({r['n_ok']}/{r['trials']} feasible)")
print(f"CSV files written to {out}/")
