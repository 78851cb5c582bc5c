"""Dedicated sensing beams are unnecessary.

Builds a feasible covariance solution that spends 30% of the power on a
separate sensing covariance, folds it into the communication streams and
rank-reduces every stream, then compares rates and ranks.
"""

import numpy as np

from nfisac.config import desk_config
from nfisac.experiments import gen_scenario
from nfisac.reconstruction import random_covariance_solution, verify_no_sensing_beams

for label, cfg in [("K=3, M=2", desk_config().replace(n_rf=6, sense_rate_min_bps=0.0)),
                   ("K=1, M=1", desk_config().replace(n_rf=4, n_users=1, n_targets=1, sense_rate_min_bps=0.0))]:
    sc = gen_scenario(cfg, seed=5)
    sol = random_covariance_solution(cfg, np.random.default_rng(5), sense_share=0.3)
    rep = verify_no_sensing_beams(sol, sc, cfg)
    print(f"{label}: {rep['status']}; min rate {rep['objective_original']:.4f} -> merged "
          f"{rep['objective_merged']:.4f} -> reduced {rep['objective_reduced']:.4f}; "
          f"power {rep['power_original']:.2f} -> {rep['power_reduced']:.2f} mW; stream ranks {rep['ranks']}")
