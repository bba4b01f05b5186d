"""Synthetic energy model for the process-locally-or-forward decision.

Two plans are priced for a window of n samples:

  local (e_alpha):   pay processing for every sample, then wake the radio
                     once and transmit the aggregate.
  forward (e_beta):  wake the radio for every sample and transmit it raw,
                     paying nothing for processing.

``decide`` picks local exactly when it is strictly cheaper (a tie forwards).
``account`` prices what a run actually did from its realized counters, with
the same coefficients. Energy is unitless; the coefficients are declared in
config, not measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

from .model import MosdenError

__all__ = ["EnergyEstimate", "TransmissionPlan", "NegativeInput",
           "estimate", "decide", "plan", "account"]

STRATEGIES = ("process_locally", "forward_raw")


class NegativeInput(MosdenError):
    """estimate() was handed a negative count or byte size."""


@dataclass(frozen=True)
class EnergyEstimate:
    """Priced plan pair; breakdown components sum to e_alpha + e_beta."""

    e_alpha: float
    e_beta: float
    breakdown: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.e_alpha < 0 or self.e_beta < 0:
            raise NegativeInput("energy totals must be >= 0")
        if self.breakdown:
            total = sum(self.breakdown.values())
            if abs(total - (self.e_alpha + self.e_beta)) > 1e-9 * max(1.0, abs(total)):
                raise MosdenError("breakdown does not sum to e_alpha + e_beta")

    def to_jsonable(self) -> dict[str, Any]:
        return {"e_alpha": self.e_alpha, "e_beta": self.e_beta,
                "breakdown": dict(self.breakdown)}


@dataclass(frozen=True)
class TransmissionPlan:
    strategy: str
    est: EnergyEstimate

    def to_jsonable(self) -> dict[str, Any]:
        return {"strategy": self.strategy, "est": self.est.to_jsonable()}


def estimate(params, n_samples: int, raw_bytes_per_sample: int,
             aggregate_bytes: int) -> EnergyEstimate:
    if n_samples < 0 or raw_bytes_per_sample < 0 or aggregate_bytes < 0:
        raise NegativeInput("estimate inputs must be non-negative")
    processing = params.c_proc_per_sample * n_samples
    e_alpha = processing + params.c_radio_wake + params.c_per_byte * aggregate_bytes
    e_beta = n_samples * (params.c_radio_wake
                          + params.c_per_byte * raw_bytes_per_sample)
    return EnergyEstimate(
        e_alpha=e_alpha,
        e_beta=e_beta,
        breakdown={
            "processing": processing,
            "radio_wake": params.c_radio_wake * (1 + n_samples),
            "transmission_bytes": params.c_per_byte
            * (aggregate_bytes + n_samples * raw_bytes_per_sample),
        },
    )


def decide(e_alpha: float, e_beta: float) -> str:
    """"process_locally" iff strictly cheaper; equality forwards."""
    return "process_locally" if e_alpha < e_beta else "forward_raw"


def plan(est: EnergyEstimate) -> TransmissionPlan:
    return TransmissionPlan(strategy=decide(est.e_alpha, est.e_beta), est=est)


def account(snapshot: Mapping[str, Any], params) -> EnergyEstimate:
    """Realized energy of a finished run, from its /metrics counters.

    e_alpha is the processing actually done (samples_ok); e_beta is the
    radio work actually done (messages_sent wakes plus bytes_sent).
    """
    samples_ok = int(snapshot.get("samples_ok", 0))
    messages_sent = int(snapshot.get("messages_sent", 0))
    bytes_sent = int(snapshot.get("bytes_sent", 0))
    processing = params.c_proc_per_sample * samples_ok
    radio_wake = params.c_radio_wake * messages_sent
    transmission = params.c_per_byte * bytes_sent
    return EnergyEstimate(
        e_alpha=processing,
        e_beta=radio_wake + transmission,
        breakdown={
            "processing": processing,
            "radio_wake": radio_wake,
            "transmission_bytes": transmission,
        },
    )
