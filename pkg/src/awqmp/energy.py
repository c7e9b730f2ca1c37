"""Radio costs, solar harvesting into an accumulator, and node reliability.

Radio costs follow the first-order model used for LEACH-family comparisons:
electronics cost per bit, plus a free-space (d^2) amplifier below the
crossover distance d0 and a multipath (d^4) amplifier above it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property


@dataclass(frozen=True)
class RadioModel:
    e_elec: float = 50e-9  # J/bit
    eps_fs: float = 10e-12  # J/bit/m^2
    eps_mp: float = 0.0013e-12  # J/bit/m^4
    e_da: float = 5e-9  # J/bit/signal

    @cached_property
    def d0(self) -> float:
        if self.eps_mp == 0.0:
            return math.inf
        return math.sqrt(self.eps_fs / self.eps_mp)


@dataclass(frozen=True)
class SolarModel:
    day_length: float = 2880.0  # rounds; 24 h of 30 s rounds
    dawn_offset: float = 0.0


@dataclass(frozen=True)
class ReliabilityParams:
    failure_rate: float = 0.0  # per round


def tx_energy(radio: RadioModel, bits: float, distance: float) -> float:
    if distance < radio.d0:
        return bits * radio.e_elec + bits * radio.eps_fs * distance * distance
    return bits * radio.e_elec + bits * radio.eps_mp * distance ** 4


def rx_energy(radio: RadioModel, bits: float) -> float:
    return bits * radio.e_elec


def aggregate_energy(radio: RadioModel, bits: float, signals: int) -> float:
    """Data-fusion cost paid by a cluster head merging ``signals`` packets."""
    return bits * signals * radio.e_da


def sunlight(solar: SolarModel, round_index: int) -> float:
    """Fraction of peak panel output in this round, in [0, 1]."""
    phase = 2.0 * math.pi * (round_index - solar.dawn_offset) / solar.day_length
    return max(0.0, math.sin(phase))


def harvest(solar: SolarModel, node, round_index: int) -> float:
    """Energy collected by ``node``'s panel during one round.

    Half-wave rectified sine: zero through the night half of each day and
    ``node.harvest_peak`` at quarter-day after dawn.
    """
    return node.harvest_peak * sunlight(solar, round_index)


def charge(state, capacity: float, amount: float):
    """Store ``amount`` joules in the accumulator; returns (state, overflow).

    Dead nodes absorb nothing and the whole amount overflows.
    """
    if not state.alive or amount <= 0.0:
        return state, amount if amount > 0.0 else 0.0
    stored = min(capacity, state.residual_energy + amount)
    overflow = state.residual_energy + amount - stored
    new = state.copy() if hasattr(state, "copy") else replace(state)
    new.residual_energy = stored
    return new, max(0.0, overflow)


def reliability(params: ReliabilityParams, t: float) -> float:
    """Probability that a node with exponential lifetime survives ``t`` rounds."""
    return math.exp(-params.failure_rate * t)


def failure_probability(failure_rate: float, dt: float) -> float:
    # -expm1 keeps precision for tiny rates
    return -math.expm1(-failure_rate * dt)


def sample_failure(params: ReliabilityParams, dt: float, rng) -> bool:
    """Bernoulli draw: does the node fail within the next ``dt`` rounds?"""
    p = failure_probability(params.failure_rate, dt)
    if p <= 0.0:
        return False
    return bool(rng.random() < p)
