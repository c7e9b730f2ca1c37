"""Cluster formation, head election (ECHERP and LEACH), routing and the
per-round energy exchange between members, heads, relays and the shore.

ECHERP here means: every epoch the base station groups the alive nodes
with k-means, then for each cluster solves a linear system for the number
of rounds each member should serve as head so that all members run out of
energy at the same moment.  Heads are then taken in turn by remaining
quota.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import RadioModel, aggregate_energy, rx_energy, tx_energy
from .linsolve import LinearSystem, SingularMatrixError, gaussian_solve
from .model import Position, Role

BASE_STATION = -1
KMEANS_MAX_ITER = 50


@dataclass(frozen=True)
class Cluster:
    cluster_id: int
    member_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError("cluster must have at least one member")


@dataclass(frozen=True)
class RotationSchedule:
    quotas: dict  # node id -> rounds of head duty


@dataclass(frozen=True)
class RoutePlan:
    next_hop: dict  # head or relay id -> id or BASE_STATION

    def path(self, start: int) -> list[int]:
        """Hops from ``start`` up to and including BASE_STATION."""
        hops = [start]
        while hops[-1] != BASE_STATION:
            hops.append(self.next_hop[hops[-1]])
            if len(hops) > len(self.next_hop) + 2:
                raise RuntimeError("route plan contains a cycle")
        return hops


@dataclass
class RoundLedger:
    dissipated: dict = field(default_factory=dict)  # node id -> joules spent
    frames_delivered: int = 0
    delivered_sources: list = field(default_factory=list)

    @property
    def total_dissipated(self) -> float:
        return math.fsum(self.dissipated.values())


# -- clustering ---------------------------------------------------------

def _kmeans(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, 2))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[c] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    labels = None
    for _ in range(KMEANS_MAX_ITER):
        dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        for c in np.flatnonzero(counts == 0):
            # reseed an empty cluster with the point farthest from its centre,
            # taken only from clusters that can spare one
            own = dist[np.arange(n), new_labels]
            donors = counts[new_labels] > 1
            if not donors.any():
                break
            far = int(np.argmax(np.where(donors, own, -1.0)))
            counts[new_labels[far]] -= 1
            new_labels[far] = c
            counts[c] = 1
            centers[c] = points[far]
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    return labels


def form_clusters(alive, k: int, rng) -> list[Cluster]:
    """Group ``alive`` (NodeSpec, NodeState) pairs into ``k`` geographic clusters.

    Seeded k-means (k-means++ start, at most 50 Lloyd iterations).  Cluster
    ids are 0..k-1, members sorted by id.
    """
    if not 1 <= k <= len(alive):
        raise ValueError(f"need 1 <= k <= {len(alive)}, got k={k}")
    ordered = sorted(alive, key=lambda pair: pair[0].id)
    ids = [spec.id for spec, _ in ordered]
    if k == 1:
        return [Cluster(0, tuple(ids))]
    points = np.array([spec.position for spec, _ in ordered], dtype=float)
    labels = _kmeans(points, k, rng)
    clusters = []
    for c in range(k):
        members = tuple(ids[i] for i in np.flatnonzero(labels == c))
        if members:
            clusters.append(Cluster(len(clusters), members))
    return clusters


def centroid(member_ids, positions) -> Position:
    xs = [positions[i][0] for i in member_ids]
    ys = [positions[i][1] for i in member_ids]
    return Position(sum(xs) / len(xs), sum(ys) / len(ys))


# -- ECHERP rotation ----------------------------------------------------

def equalization_matrix(e_head, e_mem, residual) -> LinearSystem:
    """Equalized-depletion system from per-member costs.

    Row i says: rounds spent as head at ``e_head[i]`` plus the remaining
    rounds of the whole schedule spent as member at ``e_mem[i]`` use up
    exactly ``residual[i]``.
    """
    e_head = np.asarray(e_head, dtype=float)
    e_mem = np.asarray(e_mem, dtype=float)
    n = len(e_head)
    a = np.repeat(e_mem[:, None], n, axis=1)
    a[np.arange(n), np.arange(n)] = e_head
    return LinearSystem(a, np.asarray(residual, dtype=float))


def role_costs(cluster: Cluster, radio: RadioModel, packet_bits, next_hop_distance, positions):
    """Per-round energy of each member as head and as plain member."""
    n = len(cluster.member_ids)
    c = centroid(cluster.member_ids, positions)
    e_head, e_mem = [], []
    for i in cluster.member_ids:
        e_head.append((n - 1) * rx_energy(radio, packet_bits)
                      + aggregate_energy(radio, packet_bits, n)
                      + tx_energy(radio, packet_bits, next_hop_distance[i]))
        e_mem.append(tx_energy(radio, packet_bits, Position(*positions[i]).distance(c)))
    return e_head, e_mem


def build_equalization_system(cluster: Cluster, states, radio: RadioModel, packet_bits,
                              next_hop_distance, positions) -> LinearSystem:
    for i in cluster.member_ids:
        if not states[i].alive:
            raise ValueError(f"node {i} in cluster {cluster.cluster_id} is dead")
    e_head, e_mem = role_costs(cluster, radio, packet_bits, next_hop_distance, positions)
    residual = [states[i].residual_energy for i in cluster.member_ids]
    return equalization_matrix(e_head, e_mem, residual)


def solve_rotation(cluster: Cluster, states, radio: RadioModel, packet_bits,
                   next_hop_distance, positions) -> RotationSchedule:
    system = build_equalization_system(cluster, states, radio, packet_bits,
                                       next_hop_distance, positions)
    try:
        x = gaussian_solve(system)
    except SingularMatrixError:
        x = None
    if x is not None:
        x = np.maximum(x, 0.0)
    if x is None or not np.any(x > 0.0):
        best = max(cluster.member_ids, key=lambda i: (states[i].residual_energy, -i))
        return RotationSchedule({i: (1.0 if i == best else 0.0) for i in cluster.member_ids})
    return RotationSchedule({i: float(q) for i, q in zip(cluster.member_ids, x)})


def estimate_next_hop_distance(member_ids, positions, bs, d0, other_centroids=(), relays=()):
    """Expected uplink distance for each member if it were head.

    Mirrors :func:`plan_routes`, with other clusters' centroids standing in
    for their (not yet elected) heads.
    """
    out = {}
    for i in member_ids:
        p = Position(*positions[i])
        d_bs = p.distance(bs)
        best = d_bs
        if d_bs > d0:
            for c in other_centroids:
                if Position(*c).distance(bs) < d_bs:
                    best = min(best, p.distance(c))
            for r in relays:
                best = min(best, p.distance(r))
        out[i] = best
    return out


def elect_head_echerp(cluster: Cluster, states, schedule: RotationSchedule | None = None) -> int:
    """Alive member with the largest remaining quota.

    Ties go to the larger residual energy, then the lower id.  Quotas come
    from ``schedule`` when given, otherwise from each state's
    ``ch_quota_remaining``.
    """
    alive = [i for i in cluster.member_ids if states[i].alive]
    if not alive:
        raise ValueError(f"cluster {cluster.cluster_id} has no alive members")

    def quota(i):
        if schedule is not None:
            return schedule.quotas.get(i, 0.0)
        return states[i].ch_quota_remaining

    return max(alive, key=lambda i: (quota(i), states[i].residual_energy, -i))


def consume_quota(state, rounds: float = 1.0):
    state.ch_quota_remaining = max(0.0, state.ch_quota_remaining - rounds)
    return state


# -- LEACH --------------------------------------------------------------

def leach_threshold(p: float, round_index: int) -> float:
    period = int(math.floor(1.0 / p + 1e-12))
    denom = 1.0 - p * (round_index % period)
    if denom <= 0.0:
        return 1.0
    t = p / denom
    return 1.0 if t >= 1.0 - 1e-12 else t


def elect_heads_leach(alive, p: float, round_index: int, rng) -> set:
    """Randomized LEACH election over (NodeSpec, NodeState) pairs.

    A node is eligible if it has not been head during the last
    ``floor(1/p)`` rounds.  One uniform draw is consumed per alive node so
    the stream position does not depend on eligibility.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    period = int(math.floor(1.0 / p + 1e-12))
    t = leach_threshold(p, round_index)
    ordered = sorted(alive, key=lambda pair: pair[0].id)
    draws = rng.random(len(ordered))
    heads = set()
    for (spec, state), u in zip(ordered, draws):
        last = state.last_head_round
        eligible = last is None or round_index - last >= period
        if eligible and u < t:
            heads.add(spec.id)
    if not heads and ordered:
        spec, _ = max(ordered, key=lambda pair: (pair[1].residual_energy, -pair[0].id))
        heads.add(spec.id)
    return heads


def clusters_around_heads(alive, heads) -> list[Cluster]:
    """Each alive node joins its nearest head (ties to the lower head id).

    Clusters are returned in ascending head-id order.
    """
    head_ids = sorted(heads)
    ordered = sorted(alive, key=lambda pair: pair[0].id)
    pts = np.array([spec.position for spec, _ in ordered], dtype=float)
    by_id = {spec.id: k for k, (spec, _) in enumerate(ordered)}
    hpts = pts[[by_id[h] for h in head_ids]]
    d2 = np.sum((pts[:, None, :] - hpts[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(d2, axis=1)  # first minimum = lowest head id
    for h_idx, h in enumerate(head_ids):
        nearest[by_id[h]] = h_idx
    groups = [[] for _ in head_ids]
    for k, (spec, _) in enumerate(ordered):
        groups[nearest[k]].append(spec.id)
    return [Cluster(c, tuple(g)) for c, g in enumerate(groups)]


# -- routing ------------------------------------------------------------

def plan_routes(heads, bs, d0: float, relays=()) -> RoutePlan:
    """Next hop for every head (and relay) toward the base station.

    Heads within ``d0`` of the shore transmit directly.  Farther heads send
    to the nearest peer that is strictly closer to the base station, or to
    a relay (super node) nearer to them than the base station is; failing
    both they go direct.  Relays always uplink straight to shore, so every
    path strictly approaches the base station and the graph is acyclic.
    """
    bs = Position(*bs)
    heads = [(i, Position(*p)) for i, p in heads]
    relays = [(i, Position(*p)) for i, p in relays]
    if not heads:
        raise ValueError("no cluster heads")
    d_bs = {i: p.distance(bs) for i, p in heads}
    next_hop = {}
    for i, p in heads:
        if d_bs[i] <= d0:
            next_hop[i] = BASE_STATION
            continue
        candidates = [(p.distance(q), j) for j, q in heads if j != i and d_bs[j] < d_bs[i]]
        candidates += [(p.distance(q), j) for j, q in relays if p.distance(q) < d_bs[i]]
        next_hop[i] = min(candidates)[1] if candidates else BASE_STATION
    for j, _ in relays:
        next_hop[j] = BASE_STATION
    return RoutePlan(next_hop)


# -- energy exchange ----------------------------------------------------

def _spend(state, cost: float, ledger: RoundLedger, node_id: int) -> bool:
    """Debit ``cost``; a node that cannot cover it dies holding zero energy.

    The amount actually drawn is always recorded, so per-round totals
    balance exactly against the residual change.
    """
    if not state.alive:
        return False
    if cost <= 0.0:
        return True
    drawn = min(cost, state.residual_energy)
    ledger.dissipated[node_id] = ledger.dissipated.get(node_id, 0.0) + drawn
    if state.residual_energy - cost > 0.0:
        state.residual_energy -= cost
        return True
    state.residual_energy = 0.0
    state.alive = False
    state.role = Role.MEMBER
    state.ch_quota_remaining = 0.0
    return False


def run_round(states, clusters, heads, plan: RoutePlan, radio: RadioModel, packet_bits,
              positions, bs, sources=None):
    """One data-gathering round.  Returns ``(new_states, ledger)``.

    ``heads`` maps cluster id to head id; ``sources`` is the set of nodes
    holding a fresh frame (default: every alive cluster member).  Input
    states are not modified.
    """
    states = {i: s.copy() for i, s in states.items()}
    ledger = RoundLedger()
    bs = Position(*bs)
    rx_cost = rx_energy(radio, packet_bits)
    hypot = math.hypot

    packets = {}  # head id -> list of frame sources carried
    for cluster in clusters:
        head = heads[cluster.cluster_id]
        hx, hy = positions[head]
        head_state = states[head]
        carried = [head] if head_state.alive and (sources is None or head in sources) else []
        for m in cluster.member_ids:
            if m == head or not states[m].alive or (sources is not None and m not in sources):
                continue
            mx, my = positions[m]
            cost = tx_energy(radio, packet_bits, hypot(hx - mx, hy - my))
            if _spend(states[m], cost, ledger, m) and _spend(head_state, rx_cost, ledger, head):
                carried.append(m)
        if carried and _spend(head_state, aggregate_energy(radio, packet_bits, len(carried)),
                              ledger, head):
            packets[head] = carried

    order = sorted(packets, key=lambda h: (-bs.distance(positions[h]), h))
    for head in order:
        if not states[head].alive:
            continue
        sender = head
        while True:
            nxt = plan.next_hop[sender]
            target = bs if nxt == BASE_STATION else positions[nxt]
            dist = Position(*positions[sender]).distance(target)
            if not _spend(states[sender], tx_energy(radio, packet_bits, dist), ledger, sender):
                break
            if nxt == BASE_STATION:
                ledger.frames_delivered += len(packets[head])
                ledger.delivered_sources.extend(packets[head])
                break
            if not _spend(states[nxt], rx_cost, ledger, nxt):
                break
            sender = nxt
    return states, ledger
