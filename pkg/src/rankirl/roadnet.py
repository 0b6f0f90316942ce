"""Synthetic road network, taxi-driver simulation and the clustered city pipeline.

States are oriented road segments: segment ``i`` between intersections
``(a, b)`` owns state ``2i`` (travelling a -> b) and ``2i + 1`` (b -> a).
Drivers pick up passengers near planted hotspots; their vacant stretches are
the demonstrations, and drivers are ranked by how little time they spend
vacant. The city is split into small clusters by removing busy
intersections, each cluster is solved on its own, and the pieces are written
back into one global reward.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.stats import spearmanr

from .features import Mu, Trajectory
from .mdp import Mdp, optimal_policy
from .ordinal import RankedDataset, RankSolution, SolverError, UnboundedProgramError, solve_sum_of_margins

log = logging.getLogger(__name__)


# --- network ------------------------------------------------------------------

@dataclass(frozen=True)
class RoadNetwork:
    positions: np.ndarray  # (n_nodes, 2)
    segments: np.ndarray  # (n_segments, 2) int endpoints, a < b
    lengths: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        seg = np.asarray(self.segments, dtype=np.int64)
        lengths = np.asarray(self.lengths, dtype=float)
        if seg.ndim != 2 or seg.shape[1] != 2 or lengths.shape != (seg.shape[0],):
            raise ValueError("segments must be (n, 2) with one length each")
        if seg.size and (seg.min() < 0 or seg.max() >= pos.shape[0]):
            raise ValueError("segment endpoint outside the node set")
        if np.any(seg[:, 0] == seg[:, 1]):
            raise ValueError("self-loop segment")
        for arr in (pos, seg, lengths):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "lengths", lengths)

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def n_segments(self) -> int:
        return self.segments.shape[0]

    @property
    def n_states(self) -> int:
        return 2 * self.n_segments

    def state_nodes(self, state: int) -> tuple[int, int]:
        """(from, to) intersections of an oriented segment."""
        a, b = self.segments[state // 2]
        return (int(a), int(b)) if state % 2 == 0 else (int(b), int(a))

    def state_heads(self) -> np.ndarray:
        """Intersection each oriented segment drives into."""
        heads = np.empty(self.n_states, dtype=np.int64)
        heads[0::2] = self.segments[:, 1]
        heads[1::2] = self.segments[:, 0]
        return heads

    def outgoing(self) -> list[list[int]]:
        """Oriented segments leaving each intersection, in state order."""
        out = [[] for _ in range(self.n_nodes)]
        for i, (a, b) in enumerate(self.segments):
            out[a].append(2 * i)
            out[b].append(2 * i + 1)
        return out

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.positions[self.segments[:, 0]] + self.positions[self.segments[:, 1]])

    def is_connected(self) -> bool:
        if self.n_nodes == 0:
            return False
        n, _ = connected_components(self._node_adjacency(), directed=False)
        return n == 1

    def _node_adjacency(self):
        a, b = self.segments[:, 0], self.segments[:, 1]
        data = np.ones(self.n_segments)
        return coo_matrix((data, (a, b)), shape=(self.n_nodes, self.n_nodes)).tocsr()


def _grid_side(n_segments: int) -> int:
    side = 2
    while 2 * side * (side - 1) + (side - 1) ** 2 < n_segments:
        side += 1
    return side


def generate_network(n_segments: int, topology_seed: int, jitter: float = 0.2) -> RoadNetwork:
    """Connected grid-with-diagonals road network with exactly ``n_segments`` segments.

    Intersections sit on a jittered square lattice. A random spanning tree
    over lattice and single-diagonal edges guarantees connectivity; further
    random candidate edges are added until the segment count is reached.
    """
    if n_segments < 10:
        raise ValueError("n_segments must be at least 10")
    rng = np.random.default_rng(topology_seed)
    side = _grid_side(n_segments)
    node = lambda r, c: r * side + c
    candidates = []
    for r in range(side):
        for c in range(side):
            if c + 1 < side:
                candidates.append((node(r, c), node(r, c + 1)))
            if r + 1 < side:
                candidates.append((node(r, c), node(r + 1, c)))
            if r + 1 < side and c + 1 < side:
                if rng.random() < 0.5:
                    candidates.append((node(r, c), node(r + 1, c + 1)))
                else:
                    candidates.append((node(r, c + 1), node(r + 1, c)))
    order = rng.permutation(len(candidates))

    parent = list(range(side * side))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    chosen, rest = [], []
    for idx in order:
        a, b = candidates[idx]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append(candidates[idx])
        else:
            rest.append(candidates[idx])
    chosen.extend(rest[: n_segments - len(chosen)])
    segments = np.array(sorted((min(a, b), max(a, b)) for a, b in chosen), dtype=np.int64)

    rows, cols = np.divmod(np.arange(side * side), side)
    positions = np.column_stack([cols, rows]).astype(float)
    positions += rng.uniform(-jitter, jitter, size=positions.shape)
    lengths = np.linalg.norm(positions[segments[:, 0]] - positions[segments[:, 1]], axis=1)
    return RoadNetwork(positions, segments, lengths)


# --- drivers ------------------------------------------------------------------

@dataclass(frozen=True)
class Hotspots:
    centers: np.ndarray  # (h, 2)
    width: float

    def field(self, points) -> np.ndarray:
        """Smooth pickup attractiveness in [0, 1] at the given 2-d points."""
        points = np.atleast_2d(points)
        if len(self.centers) == 0:
            return np.zeros(points.shape[0])
        d2 = ((points[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-d2 / (2.0 * self.width ** 2)).max(axis=1)


def plant_hotspots(net: RoadNetwork, n_hotspots: int, seed: int, width: float = 1.5) -> Hotspots:
    rng = np.random.default_rng([seed, 1])
    picks = rng.choice(net.n_nodes, size=n_hotspots, replace=False) if n_hotspots else []
    return Hotspots(net.positions[np.asarray(picks, dtype=np.int64)].reshape(-1, 2), width)


def segment_quality(net: RoadNetwork, hotspots: Hotspots) -> np.ndarray:
    """Planted ground-truth pickup quality per segment."""
    return hotspots.field(net.midpoints())


@dataclass(frozen=True)
class DriverLog:
    """One driver's day: visited oriented segments with occupancy and time stamps."""

    driver_id: int
    trajectories: tuple  # of Trajectory, each with occupied and times
    skill: float = float("nan")

    @property
    def vacancy_ratio(self) -> float:
        occ = np.concatenate([np.asarray(t.occupied, dtype=bool) for t in self.trajectories])
        return float(np.mean(~occ))

    def vacant_runs(self) -> list[np.ndarray]:
        """Maximal unoccupied stretches, each one demonstration."""
        runs = []
        for traj in self.trajectories:
            occ = np.asarray(traj.occupied, dtype=bool)
            start = None
            for t, busy in enumerate(np.append(occ, True)):
                if not busy and start is None:
                    start = t
                elif busy and start is not None:
                    runs.append(traj.states[start:t])
                    start = None
        return runs


def default_skills(n_drivers: int, tiers: int = 3) -> np.ndarray:
    """Skill levels 0, 0.5, 1 (for three tiers) split as evenly as possible."""
    level = np.arange(n_drivers) * tiers // n_drivers
    return level / max(tiers - 1, 1)


class _Router:
    """Shortest routes (by length) between intersections as oriented-segment lists."""

    def __init__(self, net: RoadNetwork):
        a, b = net.segments[:, 0], net.segments[:, 1]
        graph = coo_matrix((net.lengths, (a, b)), shape=(net.n_nodes, net.n_nodes)).tocsr()
        self.dist, self.pred = shortest_path(graph, directed=False, return_predecessors=True)
        self.state_of = {}
        for i, (u, v) in enumerate(net.segments):
            self.state_of[(int(u), int(v))] = 2 * i
            self.state_of[(int(v), int(u))] = 2 * i + 1

    def route(self, src: int, dst: int) -> list[int]:
        nodes = [dst]
        while nodes[-1] != src:
            nodes.append(int(self.pred[src, nodes[-1]]))
        nodes.reverse()
        return [self.state_of[(u, v)] for u, v in zip(nodes[:-1], nodes[1:])]


def simulate_drivers(
    net: RoadNetwork,
    n_drivers: int,
    skill_profile=None,
    seed: int = 0,
    n_hotspots: int = 3,
    shift_length: int = 3000,
    pickup_rate: float = 0.3,
    knowledge: float = 3.0,
    hotspots: Hotspots | None = None,
) -> tuple[list[DriverLog], Hotspots]:
    """Simulate one shift per driver on ``net``.

    A vacant driver on a segment of quality ``q`` finds a passenger with
    probability ``pickup_rate * q`` and then drives the shortest route to a
    uniformly random destination intersection. At each intersection a
    vacant driver picks the next segment with probability proportional to
    ``exp(-knowledge * skill * d)``, where ``d`` is the road distance from
    the segment's far end to the nearest hotspot; ``skill = 0`` is a uniform
    random walk. The default skill profile has three equal tiers.
    """
    if n_drivers < 1:
        raise ValueError("need at least one driver")
    skills = default_skills(n_drivers) if skill_profile is None else np.asarray(skill_profile, float)
    if skills.shape != (n_drivers,):
        raise ValueError("skill_profile must have one entry per driver")
    if hotspots is None:
        hotspots = plant_hotspots(net, n_hotspots, seed)
    quality = np.repeat(segment_quality(net, hotspots), 2)  # per oriented state
    heads = net.state_heads()
    out = net.outgoing()
    router = _Router(net)
    if len(hotspots.centers):
        hub_nodes = [int(np.argmin(((net.positions - c) ** 2).sum(axis=1))) for c in hotspots.centers]
        head_dist = router.dist[hub_nodes].min(axis=0)[heads]
    else:
        head_dist = np.zeros(net.n_states)
    logs = []
    for driver in range(n_drivers):
        rng = np.random.default_rng([seed, 2, driver])
        turn_cdf = []
        for options in out:
            logits = -knowledge * skills[driver] * head_dist[options]
            p = np.exp(logits - logits.max())
            turn_cdf.append(np.cumsum(p / p.sum()))
        state = int(rng.integers(net.n_states))
        states = np.empty(shift_length, dtype=np.int64)
        occupied = np.zeros(shift_length, dtype=bool)
        route: list[int] = []
        for t in range(shift_length):
            states[t] = state
            if route or rng.random() < pickup_rate * quality[state]:
                occupied[t] = True
                if not route:
                    here = int(heads[state])
                    dest = int(rng.integers(net.n_nodes - 1))
                    route = router.route(here, dest + (dest >= here))
            if route:
                # the passenger leaves at the start of the final route segment
                state = route.pop(0)
            else:
                node = heads[state]
                pick = int(np.searchsorted(turn_cdf[node], rng.random(), side="right"))
                state = out[node][min(pick, len(out[node]) - 1)]
        traj = Trajectory(states, occupied, np.arange(shift_length))
        logs.append(DriverLog(driver, (traj,), float(skills[driver])))
    return logs, hotspots


@dataclass(frozen=True)
class DriverRanking:
    ranks: dict  # driver_id -> internal rank (k = best)
    ties: bool

    def members(self, rank: int) -> list:
        return sorted(d for d, r in self.ranks.items() if r == rank)


def rank_drivers(logs, k: int, per_rank: int) -> DriverRanking:
    """Lowest vacancy ratios form the best rank; leftover drivers are dropped."""
    if k < 2 or per_rank < 1:
        raise ValueError("need k >= 2 and per_rank >= 1")
    if len(logs) < k * per_rank:
        raise ValueError(f"need {k * per_rank} drivers, have {len(logs)}")
    ordered = sorted(logs, key=lambda lg: (lg.vacancy_ratio, lg.driver_id))
    if len(ordered) > k * per_rank:
        # keep the best and worst, dropping the middle as evenly as possible
        picks = np.round(np.linspace(0, len(ordered) - 1, k * per_rank)).astype(int)
        ordered = [ordered[i] for i in picks]
    ratios = [lg.vacancy_ratio for lg in ordered]
    ranks = {lg.driver_id: k - i // per_rank for i, lg in enumerate(ordered)}
    ties = len(set(ratios)) < len(ratios)
    if ties:
        log.warning("rank ties: drivers with equal vacancy ratios ordered by driver_id")
    return DriverRanking(ranks, ties)


# --- decomposition ------------------------------------------------------------

def traversal_counts(net: RoadNetwork, logs) -> np.ndarray:
    """Number of times each intersection is driven through."""
    heads = net.state_heads()
    counts = np.zeros(net.n_nodes, dtype=np.int64)
    for lg in logs:
        for traj in lg.trajectories:
            np.add.at(counts, heads[traj.states], 1)
    return counts


@dataclass(frozen=True)
class Decomposition:
    clusters: tuple  # of sorted state-id arrays
    cut_intersections: tuple  # in cut order
    cut_states: np.ndarray  # states with no cluster
    max_dim: int
    satisfied: bool = True

    def cluster_of(self, n_states: int) -> np.ndarray:
        label = np.full(n_states, -1, dtype=np.int64)
        for i, states in enumerate(self.clusters):
            label[states] = i
        return label


def _segment_clusters(net: RoadNetwork, cut: np.ndarray):
    """Connected groups of segments sharing a non-cut intersection."""
    a, b = net.segments[:, 0], net.segments[:, 1]
    live = ~(cut[a] & cut[b])
    # bipartite segment/intersection graph restricted to non-cut intersections
    rows, cols = [], []
    for end in (a, b):
        keep = live & ~cut[end]
        rows.append(np.flatnonzero(keep))
        cols.append(net.n_segments + end[keep])
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    size = net.n_segments + net.n_nodes
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(size, size))
    _, labels = connected_components(graph, directed=False)
    seg_labels = labels[: net.n_segments]
    groups = {}
    for seg in np.flatnonzero(live):
        groups.setdefault(int(seg_labels[seg]), []).append(int(seg))
    return sorted(groups.values()), np.flatnonzero(~live)


def decompose(net: RoadNetwork, logs, max_dim: int) -> Decomposition:
    """Greedily remove the busiest intersection of an oversized cluster.

    A removed intersection splits the segments around it; a segment is left
    without a cluster only when both of its endpoints are removed. Repeats
    until every cluster has at most ``max_dim`` states.
    """
    if max_dim < 2:
        raise ValueError("max_dim must be at least 2")
    counts = traversal_counts(net, logs)
    cut = np.zeros(net.n_nodes, dtype=bool)
    order = []
    while True:
        groups, orphans = _segment_clusters(net, cut)
        big = [g for g in groups if 2 * len(g) > max_dim]
        if not big:
            break
        target = max(big, key=lambda g: (len(g), -g[0]))
        nodes = np.unique(net.segments[target])
        nodes = nodes[~cut[nodes]]
        if nodes.size == 0:  # cannot split further
            log.warning("decomposition bound %d not reachable", max_dim)
            return _decomposition(groups, order, orphans, max_dim, False)
        pick = int(nodes[np.lexsort((nodes, -counts[nodes]))[0]])
        cut[pick] = True
        order.append(pick)
    return _decomposition(groups, order, orphans, max_dim, True)


def _decomposition(groups, order, orphans, max_dim, ok) -> Decomposition:
    clusters = tuple(np.sort(np.concatenate([[2 * s, 2 * s + 1] for s in g])).astype(np.int64) for g in groups)
    cut_states = np.sort(np.concatenate([[2 * s, 2 * s + 1] for s in orphans])).astype(np.int64) \
        if len(orphans) else np.zeros(0, dtype=np.int64)
    return Decomposition(clusters, tuple(order), cut_states, max_dim, ok)


# --- solving ------------------------------------------------------------------

def driver_mu(net: RoadNetwork, lg: DriverLog, gamma: float) -> np.ndarray:
    """Discounted state mass averaged over the driver's vacant runs."""
    runs = lg.vacant_runs()
    if not runs:
        return np.zeros(net.n_states)
    rows = np.zeros((len(runs), net.n_states))
    for i, run in enumerate(runs):
        np.add.at(rows[i], run, float(gamma) ** np.arange(run.size))
    return rows.mean(axis=0)


def network_mdp(net: RoadNetwork, gamma: float) -> Mdp:
    """Deterministic turn-choice MDP; short action lists repeat their last turn."""
    out = net.outgoing()
    heads = net.state_heads()
    n_actions = max(len(o) for o in out)
    P = np.zeros((net.n_states, n_actions, net.n_states))
    for s in range(net.n_states):
        options = out[heads[s]]
        for a in range(n_actions):
            P[s, a, options[min(a, len(options) - 1)]] = 1.0
    return Mdp(P, gamma)


@dataclass
class ClusterResult:
    states: np.ndarray
    solution: RankSolution | None
    degenerate: bool
    error: str | None = None


@dataclass
class CityResult:
    w: np.ndarray
    flagged: np.ndarray  # states without an estimate
    clusters: list
    values: np.ndarray  # optimal state values under w
    segment_values: np.ndarray  # best orientation per segment
    segment_flagged: np.ndarray
    expected_value: float
    mus: dict = field(default_factory=dict)


def solve_city(
    net: RoadNetwork,
    logs,
    ranking: DriverRanking,
    decomposition: Decomposition,
    gamma: float = 0.99,
    C: float = 1.0,
    tol: float = 1e-9,
    n_jobs: int = 1,
    value_gamma: float | None = 0.5,
) -> CityResult:
    """Solve every cluster independently and assemble the global reward and values.

    ``gamma`` discounts the demonstrations; ``value_gamma`` (``None`` means
    ``gamma``) is the planning horizon of the reported value map. On a
    deterministic turn graph a long horizon makes every value a function of
    the distance to the single best loop, so a shorter one gives a more
    local map.
    """
    by_id = {lg.driver_id: lg for lg in logs}
    mus = {d: driver_mu(net, by_id[d], gamma) for d in sorted(ranking.ranks)}
    drivers = sorted(mus)

    def solve(states) -> ClusterResult:
        block = [Mu(mus[d][states], ranking.ranks[d], d) for d in drivers]
        if not any(np.any(m.vector > 0) for m in block):
            return ClusterResult(states, None, True)
        try:
            sol = solve_sum_of_margins(RankedDataset(tuple(block), C), tol=tol)
        except (SolverError, UnboundedProgramError, ValueError) as exc:
            log.warning("cluster of %d states failed: %s", states.size, exc)
            return ClusterResult(states, None, True, str(exc))
        return ClusterResult(states, sol, sol.degenerate)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(solve, decomposition.clusters))
    else:
        results = [solve(c) for c in decomposition.clusters]

    w = np.zeros(net.n_states)
    flagged = np.zeros(net.n_states, dtype=bool)
    flagged[decomposition.cut_states] = True
    for res in results:
        if res.solution is not None:
            w[res.states] = res.solution.w
        if res.error is not None:
            flagged[res.states] = True

    mdp = network_mdp(net, gamma if value_gamma is None else value_gamma)
    _, values = optimal_policy(mdp, w, tol=tol)
    pair = values.reshape(-1, 2)
    seg_values = pair.max(axis=1)
    seg_flagged = flagged.reshape(-1, 2).all(axis=1)

    mass = np.sum([mus[d] for d in drivers], axis=0)
    support = mass > 0
    d0 = support / support.sum() if support.any() else np.full(net.n_states, 1.0 / net.n_states)
    return CityResult(w, flagged, results, values, seg_values, seg_flagged, float(d0 @ values), mus)


def value_quality_correlation(result: CityResult, quality) -> float:
    """Spearman correlation between per-segment value and planted quality (unflagged segments)."""
    keep = ~result.segment_flagged
    rho = spearmanr(result.segment_values[keep], np.asarray(quality)[keep]).statistic
    return float(rho)
