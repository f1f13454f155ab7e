"""Monte-Carlo comparison of the cooperation modes on the nominal scene.

Runs the three arms on the same seeds and prints the final-slot UE error:

* no cooperation;
* AP sensing (active+passive);
* AP sensing plus crowdsourcing.

The metrics table of the last arm is written to CSV.  For the full
500-seed sign test, run the acceptance suite.

    python demos/07_monte_carlo_ablation.py [n_seeds] [out.csv]
"""

import sys

import numpy as np

from isaccoop.bench import nominal_config, run_monte_carlo, write_metrics


def main(n_seeds=40, out="ablation_metrics.csv"):
    base = nominal_config()
    arms = {
        "none": base.with_cooperation(active_passive=False, crowdsourcing=False),
        "active+passive": base.with_cooperation(active_passive=True, crowdsourcing=False),
        "+crowdsourcing": base.with_cooperation(active_passive=True, crowdsourcing=True),
    }
    last = base.n_slots - 1
    for name, cfg in arms.items():
        res = run_monte_carlo(cfg, range(n_seeds))
        mean, std = res.summary[last]["ue_rmse"]
        va = np.nanmean([r.va_rmse for r in res.table if r.slot == last])
        print(f"{name:15s} final UE error {mean:.3f} +- {std:.3f} m, VA RMSE {va:.3f} m")
    print("wrote", write_metrics(res.table, out))


if __name__ == "__main__":
    args = sys.argv[1:]
    main(int(args[0]) if args else 40, args[1] if len(args) > 1 else "ablation_metrics.csv")
