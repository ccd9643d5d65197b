"""Arithmetic energy model: FLOPs, synaptic operations and sign operations.

Memory access and data movement are not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .absorb import AbsorbedModel, OpTrace, infer_integer


@dataclass(frozen=True)
class EnergyCosts:
    """Picojoules per operation, kept as exact rationals."""

    flop_pj: Fraction = Fraction(25, 2)       # 12.5 pJ per 32-bit FLOP
    sop_pj: Fraction = Fraction(77, 1000)     # 77 fJ per 32-bit SOP
    sign_pj: Fraction = Fraction(37, 10)      # 3.7 pJ per sign operation


COSTS = EnergyCosts()


def estimate_energy(flops, sops, sign_ops=0, costs: EnergyCosts = COSTS) -> float:
    """Energy in microjoules."""
    for name, v in (("flops", flops), ("sops", sops), ("sign_ops", sign_ops)):
        if v < 0:
            raise ValueError(f"{name} must be non-negative")
    pj = (Fraction(flops) * costs.flop_pj + Fraction(sops) * costs.sop_pj
          + Fraction(sign_ops) * costs.sign_pj)
    return float(pj / 10**6)


@dataclass
class EnergyReport:
    flops: int
    sops: int
    sign_ops: int
    energy_microjoules: float
    samples: int = 1
    per_layer: list = field(default_factory=list)

    @property
    def per_sample_energy(self) -> float:
        return self.energy_microjoules / max(self.samples, 1)

    def recompute(self) -> float:
        return estimate_energy(self.flops, self.sops, self.sign_ops)


def count_ops(model: AbsorbedModel, inputs) -> tuple[int, int, int]:
    """``(flops, sops, sign_ops)`` of running ``model`` on ``inputs``."""
    _, trace = infer_integer(model, inputs)
    return trace.flops, trace.sops, trace.sign_ops


def report_from_trace(trace: OpTrace) -> EnergyReport:
    per_layer = [
        {"layer": l.name, "flops": l.flops, "sops": l.sops,
         "energy_uj": estimate_energy(l.flops, l.sops)}
        for l in trace.layers
    ]
    return EnergyReport(trace.flops, trace.sops, trace.sign_ops,
                        estimate_energy(trace.flops, trace.sops, trace.sign_ops),
                        samples=trace.batch, per_layer=per_layer)


def energy_report(model: AbsorbedModel, inputs) -> EnergyReport:
    _, trace = infer_integer(model, inputs)
    return report_from_trace(trace)
