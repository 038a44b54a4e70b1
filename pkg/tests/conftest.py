import numpy as np
import pytest

from soccerchance.sbc import ToySpec
from soccerchance.simulate import SimConfig, draw_ground_truth, round_robin, simulate_season


def toy_season(seed=0, n_teams=4, n_fixtures=24, state_dynamics="static", **sim_kw):
    """A small simulated season drawn from the toy priors."""
    toy = ToySpec(n_teams=n_teams, n_fixtures=n_fixtures, roster_size=3)
    rng = np.random.default_rng(seed)
    truth = draw_ground_truth(toy.roster(), toy.centroids(), rng, toy.rate_priors, toy.composition_priors)
    fixtures = round_robin(toy.teams, n_fixtures)
    return simulate_season(SimConfig(fixtures, truth=truth, seed=seed, state_dynamics=state_dynamics, **sim_kw))


@pytest.fixture(scope="session")
def small_season():
    return toy_season(seed=11, state_dynamics="goal-coupled", red_card_rate=0.05)


def make_draws(teams=("A", "B"), S=1, players=(), centroids=None, M=None, **arrays):
    """PosteriorDraws assembled from explicit arrays; unspecified fields are zero or uniform."""
    from soccerchance.ingest import PlayerKey
    from soccerchance.inference import PosteriorDraws
    from soccerchance.spatial import Roster

    roster = Roster.build(teams, [p if isinstance(p, PlayerKey) else PlayerKey(*p) for p in players])
    J, P, B = len(teams), len(roster), 6
    centroids = dict(centroids or {})
    out = dict(
        iteration=np.arange(S),
        theta=np.zeros((S, J, B)),
        gamma=np.zeros((S, B)),
        alpha=np.zeros(S),
        beta=np.zeros(S),
        tau=np.ones(S),
        phi_assist=np.zeros((S, P, B)),
        phi_chance=np.zeros((S, P, B)),
    )
    if P:
        sizes = np.bincount(roster.team_of, minlength=J)[roster.team_of]
        out["phi_assist"] = out["phi_chance"] = np.broadcast_to(1.0 / sizes[None, :, None], (S, P, B)).copy()
    kappa = {k: np.full((S, P, B, c.M), 1.0 / c.M) for k, c in centroids.items()}
    sigma = {k: np.tile(np.eye(2), (S, c.M, 1, 1)) for k, c in centroids.items()}
    kappa.update(arrays.pop("kappa", {}))
    sigma.update(arrays.pop("sigma", {}))
    for k, v in arrays.items():
        out[k] = np.asarray(v, dtype=float) if k != "iteration" else np.asarray(v)
    return PosteriorDraws(tuple(teams), roster, centroids, kappa=kappa, sigma=sigma, **out)


# PASS/FAIL lines from the acceptance tests, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
