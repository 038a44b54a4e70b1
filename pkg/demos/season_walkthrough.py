"""Simulate a season, fit the model and read off the main summaries.

Run from the repository root::

    python demos/season_walkthrough.py [output_dir]

The script plants abilities and a positive home effect, simulates a
double round robin between eight teams, fits the sampler and prints how
well the planted values were recovered. SVG maps go to ``output_dir``
(default ``demo_output``).
"""

import sys
import warnings
from pathlib import Path

import numpy as np

from soccerchance.analytics import (
    density_surface,
    home_effect_summary,
    involvement_probability,
    radar_weights,
    ranked,
    team_ability_table,
)
from soccerchance.inference import SamplerConfig, diagnostics, fit
from soccerchance.rate_model import RateParams
from soccerchance.render import VoronoiMap, emit_svg
from soccerchance.sbc import ToySpec
from soccerchance.simulate import SimConfig, draw_ground_truth, posterior_predictive_counts, round_robin, simulate_season

warnings.simplefilter("ignore", UserWarning)
out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out_dir.mkdir(parents=True, exist_ok=True)

# 1. a synthetic league with known parameters
toy = ToySpec(n_teams=8, roster_size=6)
rng = np.random.default_rng(2017)
truth = draw_ground_truth(toy.roster(), toy.centroids(), rng, toy.rate_priors, toy.composition_priors)
theta = np.linspace(-0.4, 0.4, 8)[:, None] * np.ones(6)  # T0 weakest ... T7 strongest
gamma = np.array([0.10, 0.15, 0.25, 0.20, 0.15, 0.10])
truth.rate = RateParams(truth.teams, theta, gamma, alpha=-0.05, beta=0.15)
season = simulate_season(
    SimConfig(round_robin(toy.teams), truth=truth, seed=1, state_dynamics="goal-coupled", red_card_rate=0.03)
)
print(f"simulated {len(season.fixtures)} fixtures, {len(season.chances)} chances")

# 2. fit (centroids come from k-means on the pooled chance locations)
result = fit(season.panel, season.chances, SamplerConfig(iterations=1500, burn_in=300, seed=3))
draws = result.draws
diag = diagnostics(draws, include_sigma=False)
print(f"{len(draws)} stored draws; acceptance {', '.join(f'{k} {v:.2f}' for k, v in draws.acceptance.items())}")
print(f"smallest ESS among rate parameters: {min(s.ess for n, s in diag.summaries.items() if n.startswith(('theta', 'gamma'))):.0f}")

# 3. team abilities: recovered ordering vs planted
abilities = team_ability_table(draws)
print("\nmean ability over the six blocks (planted -> recovered)")
for j, team in enumerate(abilities.row_labels):
    print(f"  {team}: {theta[j].mean():+.2f} -> {abilities.values[j].mean():+.2f}")

print("\nhome effect per block")
home = home_effect_summary(draws)
for label, (mean, lo, hi), planted in zip(home.row_labels, home.values, gamma):
    print(f"  {label}: {mean:.2f} [{lo:.2f}, {hi:.2f}]  planted {planted:.2f}")

# 4. players: where does a player assist from, and who is involved near goal?
player = draws.players[0]
radar = radar_weights(draws, player, "assist")
print(f"\nassist-location weights for {player} in block 1:", np.round(radar.values[0], 3).tolist())
inv = involvement_probability(draws, "T7", 6, (-40, 40, 20, 90))
print("most likely T7 assister into the central box area in block 6:", ranked(inv)[:3])

# 5. predictive count for one block
pc = posterior_predictive_counts(draws, "T7", "T0", 3, is_home=True)
print(f"\nT7 at home to T0, block 3: mean {pc.mean:.2f} chances, 95% interval {pc.quantiles[0.025]}-{pc.quantiles[0.975]}")

# 6. pictures
cents = draws.centroids["assist"]
(out_dir / "assist_zones.svg").write_text(emit_svg(VoronoiMap(cents, radar.values[0])))
(out_dir / "assist_surface.svg").write_text(emit_svg(density_surface(draws, player, 1, "assist")))
print(f"\nwrote {out_dir / 'assist_zones.svg'} and {out_dir / 'assist_surface.svg'}")
