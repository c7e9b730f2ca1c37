"""Round loop, metrics and CSV output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import protocols as proto
from .energy import failure_probability, sunlight
from .model import (PROTOCOLS, Kind, NodeState, Role, ScenarioConfig, ScenarioError,
                    generate_topology, rng_streams, validate_scenario)
from .nodesim import (AcqState, MeasurementFrame, Phase, run_cycle, sample_sensor, truth_at)

CSV_HEADER = ("round", "alive", "residual_j", "dissipated_j", "harvested_j", "frames")
SENSOR_PHASES = (Phase.ACQ_TEMP, Phase.ACQ_PH, Phase.ACQ_COND)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    alive_count: int
    total_residual: float
    total_dissipated: float  # cumulative radio energy
    total_harvested: float  # cumulative energy actually stored
    frames_delivered: int  # this round
    total_sensing: float = 0.0  # cumulative per-cycle sensing debits


@dataclass
class Metrics:
    protocol: str
    rng_seed: int
    node_count: int  # ordinary nodes tracked by alive_count
    initial_total: float
    records: list = field(default_factory=list)
    frames: list = field(default_factory=list)  # filled only when collected

    def _first_round(self, predicate):
        for rec in self.records:
            if predicate(rec.alive_count):
                return rec.round
        return None

    @property
    def first_death_round(self):
        return self._first_round(lambda a: a < self.node_count)

    @property
    def half_death_round(self):
        return self._first_round(lambda a: a <= self.node_count / 2)

    @property
    def last_death_round(self):
        return self._first_round(lambda a: a == 0)

    @property
    def total_frames(self) -> int:
        return sum(r.frames_delivered for r in self.records)

    def summary(self) -> dict:
        return {
            "protocol": self.protocol,
            "rng_seed": self.rng_seed,
            "first_death_round": self.first_death_round,
            "half_death_round": self.half_death_round,
            "last_death_round": self.last_death_round,
            "total_frames": self.total_frames,
        }

    def dissipated_at(self, round_index: int) -> float:
        """Cumulative dissipation at the end of ``round_index`` (or the last round run)."""
        best = 0.0
        for rec in self.records:
            if rec.round > round_index:
                break
            best = rec.total_dissipated
        return best


@lru_cache(maxsize=256)
def _cycle(state: AcqState, wait_s: float, timeout_s: float, fail_at):
    return run_cycle(state, wait_s, timeout_s, fail_at=fail_at)


class Simulation:
    """Mutable state of one run.  Use :func:`simulate` unless stepping by hand."""

    def __init__(self, config: ScenarioConfig, collect_frames: bool = False):
        violations = validate_scenario(config)
        if violations:
            raise ScenarioError("invalid scenario: " + "; ".join(violations), violations)
        self.config = config
        self.collect_frames = collect_frames
        self.rng = rng_streams(config.rng_seed)
        self.specs = generate_topology(config, self.rng["topology"])
        self.positions = {s.id: s.position for s in self.specs}
        self.states = {s.id: NodeState.initial(s) for s in self.specs}
        self.ordinary = [s for s in self.specs if s.kind is Kind.ORDINARY]
        self.supers = [s for s in self.specs if s.kind is Kind.SUPER]
        self.ordinary_xy = (np.array([s.position.x for s in self.ordinary]),
                            np.array([s.position.y for s in self.ordinary]))
        self.acq = {s.id: AcqState() for s in self.ordinary}
        self.sequence = {s.id: 0 for s in self.ordinary}
        self.fail_p = np.array([failure_probability(s.failure_rate, 1.0) for s in self.specs])
        self.clusters = None
        self.heads = {}
        self.need_recluster = True
        self.round = 0
        self.cum_dissipated = 0.0
        self.cum_harvested = 0.0
        self.cum_sensing = 0.0
        self.metrics = Metrics(
            protocol=config.protocol,
            rng_seed=config.rng_seed,
            node_count=len(self.ordinary),
            initial_total=math.fsum(s.residual_energy for s in self.states.values()),
        )

    # -- helpers --------------------------------------------------------

    def alive_ordinary(self):
        return [(s, self.states[s.id]) for s in self.ordinary if self.states[s.id].alive]

    def alive_relays(self):
        return [(s.id, s.position) for s in self.supers if self.states[s.id].alive]

    def _kill(self, node_id):
        st = self.states[node_id]
        st.alive = False
        st.role = Role.MEMBER
        st.ch_quota_remaining = 0.0
        self.need_recluster = True

    # -- round phases ---------------------------------------------------

    def _sample_failures(self):
        draws = self.rng["failure"].random(len(self.specs))
        for spec, u in zip(self.specs, draws):
            if self.states[spec.id].alive and u < self.fail_p[spec.id]:
                self._kill(spec.id)

    def _harvest(self):
        # same arithmetic as energy.charge, applied in place
        sun = sunlight(self.config.solar, self.round)
        if sun <= 0.0:
            return
        for spec in self.specs:
            st = self.states[spec.id]
            if not st.alive:
                continue
            before = st.residual_energy
            st.residual_energy = min(spec.accumulator_capacity, before + spec.harvest_peak * sun)
            self.cum_harvested += st.residual_energy - before

    def _recluster_echerp(self, alive):
        cfg = self.config
        k = max(1, int(math.floor(cfg.cluster_fraction * len(alive) + 0.5)))
        k = min(k, len(alive))
        self.clusters = proto.form_clusters(alive, k, self.rng["clustering"])
        cents = [proto.centroid(c.member_ids, self.positions) for c in self.clusters]
        relays = [p for _, p in self.alive_relays()]
        bs = cfg.bs_position
        for st in self.states.values():
            st.ch_quota_remaining = 0.0
            st.cluster_id = None
        for c, cent in zip(self.clusters, cents):
            others = [o for o in cents if o is not cent]
            hop = proto.estimate_next_hop_distance(c.member_ids, self.positions, bs,
                                                   cfg.radio.d0, others, relays)
            sched = proto.solve_rotation(c, self.states, cfg.radio, cfg.packet_bits, hop,
                                         self.positions)
            for i in c.member_ids:
                self.states[i].ch_quota_remaining = sched.quotas[i]
                self.states[i].cluster_id = c.cluster_id
        self.need_recluster = False

    def _elect(self, alive):
        cfg = self.config
        if cfg.protocol == "echerp":
            if self.need_recluster or self.clusters is None or self.round % cfg.reelection_epoch == 0:
                self._recluster_echerp(alive)
            self.heads = {c.cluster_id: proto.elect_head_echerp(c, self.states)
                          for c in self.clusters}
        else:
            heads = proto.elect_heads_leach(alive, cfg.cluster_fraction, self.round,
                                            self.rng["election"])
            self.clusters = proto.clusters_around_heads(alive, heads)
            # clusters come back ordered by head id
            self.heads = {c.cluster_id: h for c, h in zip(self.clusters, sorted(heads))}
            for c in self.clusters:
                for i in c.member_ids:
                    self.states[i].cluster_id = c.cluster_id
            self.need_recluster = False
        for st in self.states.values():
            st.role = Role.MEMBER
        for h in self.heads.values():
            self.states[h].role = Role.CLUSTER_HEAD

    def _acquire(self):
        """One acquisition cycle per alive ordinary node; returns frame sources."""
        cfg = self.config
        rng = self.rng["sensing"]
        n = len(self.ordinary)
        timeout_u = rng.random(n)
        which = rng.integers(0, 3, n)
        xs, ys = self.ordinary_xy
        t_now = self.round * cfg.round_seconds
        temp_t, ph_t, cond_t = truth_at(cfg.water, xs, ys, np.full(n, t_now))
        temp = sample_sensor(cfg.temp_sensor, temp_t, rng)
        ph = sample_sensor(cfg.ph_sensor, ph_t, rng)
        cond = sample_sensor(cfg.cond_sensor, np.maximum(cond_t, 0.0), rng)

        sources = set()
        p_timeout = cfg.sensor_timeout_probability
        failing = (timeout_u < p_timeout).tolist()
        which = which.tolist()
        for k, spec in enumerate(self.ordinary):
            st = self.states[spec.id]
            if not st.alive:
                continue
            fail_at = SENSOR_PHASES[which[k]] if failing[k] else None
            self.acq[spec.id], emitted, _ = _cycle(self.acq[spec.id], cfg.wait_seconds,
                                                   cfg.sensor_timeout_seconds, fail_at)
            if not emitted:
                continue
            before = st.residual_energy
            debit = cfg.sensing_energy
            if before - debit > 0.0:
                st.residual_energy -= debit
                self.cum_sensing += debit
            else:
                self.cum_sensing += before
                st.residual_energy = 0.0
                self._kill(spec.id)
                continue
            sources.add(spec.id)
            if self.collect_frames:
                self.pending_frames[spec.id] = MeasurementFrame(
                    node_id=spec.id,
                    sequence=self.sequence[spec.id],
                    timestamp=int(round(t_now)),
                    temperature=float(temp[k]),
                    ph=float(ph[k]),
                    conductivity=float(cond[k]),
                    residual_energy=round(st.residual_energy, 6),
                )
            self.sequence[spec.id] += 1
        return sources

    def step(self):
        """Advance one round and append its metrics record."""
        cfg = self.config
        self.pending_frames = {}
        self._sample_failures()
        self._harvest()
        alive = self.alive_ordinary()
        frames = 0
        if alive:
            self._elect(alive)
            sources = self._acquire()
            live_heads = {c: h for c, h in self.heads.items() if self.states[h].alive}
            clusters = [c for c in self.clusters if c.cluster_id in live_heads]
            if live_heads:
                plan = proto.plan_routes(
                    [(h, self.positions[h]) for h in live_heads.values()],
                    cfg.bs_position, cfg.radio.d0, self.alive_relays())
                self.states, ledger = proto.run_round(
                    self.states, clusters, live_heads, plan, cfg.radio, cfg.packet_bits,
                    self.positions, cfg.bs_position, sources)
                self.cum_dissipated += ledger.total_dissipated
                frames = ledger.frames_delivered
                if self.collect_frames:
                    self.metrics.frames.extend(self.pending_frames[i]
                                               for i in sorted(ledger.delivered_sources))
            if cfg.protocol == "echerp":
                for h in live_heads.values():
                    proto.consume_quota(self.states[h])
            else:
                for h in live_heads.values():
                    self.states[h].last_head_round = self.round
            if any(not self.states[s.id].alive for s, _ in alive):
                self.need_recluster = True
        self.metrics.records.append(RoundRecord(
            round=self.round,
            alive_count=sum(1 for s in self.ordinary if self.states[s.id].alive),
            total_residual=math.fsum(s.residual_energy for s in self.states.values()),
            total_dissipated=self.cum_dissipated,
            total_harvested=self.cum_harvested,
            frames_delivered=frames,
            total_sensing=self.cum_sensing,
        ))
        self.round += 1

    def finished(self) -> bool:
        if self.round >= self.config.rounds_max:
            return True
        return bool(self.metrics.records) and self.metrics.records[-1].alive_count == 0


def simulate(config: ScenarioConfig, collect_frames: bool = False) -> Metrics:
    """Run one scenario to ``rounds_max`` or until every ordinary node is dead."""
    sim = Simulation(config, collect_frames=collect_frames)
    while not sim.finished():
        sim.step()
    return sim.metrics


def compare(config: ScenarioConfig, protocols) -> dict:
    """Run the same scenario (seed, topology) once per protocol."""
    protocols = [p.lower() for p in protocols]
    if not protocols:
        raise ValueError("no protocols given")
    for p in protocols:
        if p not in PROTOCOLS:
            raise ValueError(f"unknown protocol {p!r}; expected one of {', '.join(PROTOCOLS)}")
    return {p: simulate(replace(config, protocol=p)) for p in protocols}


# -- CSV ----------------------------------------------------------------

def _fmt(value) -> str:
    return "NA" if value is None else str(value)


def format_metrics_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in metrics.records:
        writer.writerow([r.round, r.alive_count, f"{r.total_residual:.6f}",
                         f"{r.total_dissipated:.6f}", f"{r.total_harvested:.6f}",
                         r.frames_delivered])
    if metrics.records:
        for key, value in metrics.summary().items():
            buf.write(f"# {key}={_fmt(value)}\n")
    return buf.getvalue()


def write_metrics_csv(metrics: Metrics, destination) -> None:
    """Write to a path or an open text file."""
    text = format_metrics_csv(metrics)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    with open(destination, "w", newline="") as fh:
        fh.write(text)


def read_metrics_csv(source):
    """Parse a metrics CSV back into (records, summary dict)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as fh:
            text = fh.read()
    lines = text.splitlines()
    summary = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            summary[key] = None if value == "NA" else value
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    records = [RoundRecord(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]), int(r[5]))
               for r in reader]
    return records, summary
