"""A short simulation-based calibration run and its negative control.

Run from the repository root::

    python demos/calibration_check.py [replicates]

Each replicate draws parameters from the toy priors, simulates a 6-team
season, fits it and records where the truth falls among the posterior
draws. With a correct sampler the ranks are uniform. The second run fits
a model whose chance rate is doubled; its home-effect ranks pile up at
one end and the uniformity test rejects. The acceptance suite runs the
same check with 200 replicates.
"""

import math
import sys
import warnings

from soccerchance.sbc import ToySpec, sbc_run, sbc_sampler_config

warnings.simplefilter("ignore", UserWarning)
replicates = int(sys.argv[1]) if len(sys.argv) > 1 else 40

toy = ToySpec()
config = sbc_sampler_config(toy, n_draws=99, thin=20)


def show(title, result):
    print(title)
    for name, p, hist in zip(result.names, result.pvalues, result.histograms):
        verdict = "rejected" if p < 0.01 else "ok"
        print(f"  {name:<24} p = {p:8.2g}  {verdict:<8} ranks per bin: {' '.join(map(str, hist))}")


show(f"correct model, {replicates} replicates (5 rank bins of 20)", sbc_run(toy, replicates, config, seed=1, bins=5))
show(
    f"\nrate doubled in the fit, {replicates // 2} replicates",
    sbc_run(toy, replicates // 2, config, seed=2, bins=5, log_rate_offset=math.log(2.0)),
)
