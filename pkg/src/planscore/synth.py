"""Seeded synthetic protocols and plan cohorts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

from scipy.stats import norm

from .core import ConstraintSpec, MetricKind, PlanRecord, ProtocolSpec, validate_protocol
from .errors import InvalidConfig, LexiconExhausted
from .knowledge_base import rng_stream

# (metric_id, structure, kind, unit)
LEXICON: tuple[tuple[str, str, MetricKind, str], ...] = (
    ("Cord_Max_Gy", "Cord", MetricKind.MAX_DOSE, "Gy"),
    ("Cord_D0.03cc_Gy", "Cord", MetricKind.DOSE_AT_VOLUME_CC, "Gy"),
    ("BrainStem_Max_Gy", "Brain Stem", MetricKind.MAX_DOSE, "Gy"),
    ("BrainStem_D0.03cc_Gy", "Brain Stem", MetricKind.DOSE_AT_VOLUME_CC, "Gy"),
    ("Lips_Mean_Gy", "Lips", MetricKind.MEAN_DOSE, "Gy"),
    ("OralCavity_Mean_Gy", "Oral Cavity", MetricKind.MEAN_DOSE, "Gy"),
    ("Parotid_Mean_Gy", "Parotid", MetricKind.MEAN_DOSE, "Gy"),
    ("Submandibular_Mean_Gy", "Submandibular", MetricKind.MEAN_DOSE, "Gy"),
    ("Larynx_Mean_Gy", "Larynx", MetricKind.MEAN_DOSE, "Gy"),
    ("Pharynx_Mean_Gy", "Pharynx", MetricKind.MEAN_DOSE, "Gy"),
    ("Pharynx_V33pct", "Pharynx", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("Mandible_Max_Gy", "Mandible", MetricKind.MAX_DOSE, "Gy"),
    ("BrachialPlexus_Max_Gy", "Brachial Plexus", MetricKind.MAX_DOSE, "Gy"),
    ("Esophagus_Mean_Gy", "Esophagus", MetricKind.MEAN_DOSE, "Gy"),
    ("Esophagus_D33pct_Gy", "Esophagus", MetricKind.DOSE_AT_VOLUME_PCT, "Gy"),
    ("Esophagus_D67pct_Gy", "Esophagus", MetricKind.DOSE_AT_VOLUME_PCT, "Gy"),
    ("Liver_D50pct_Gy", "Liver", MetricKind.DOSE_AT_VOLUME_PCT, "Gy"),
    ("Heart_Mean_Gy", "Heart", MetricKind.MEAN_DOSE, "Gy"),
    ("Heart_Max_Gy", "Heart", MetricKind.MAX_DOSE, "Gy"),
    ("Heart_D33pct_Gy", "Heart", MetricKind.DOSE_AT_VOLUME_PCT, "Gy"),
    ("Heart_V50Gy_pct", "Heart", MetricKind.VOLUME_AT_DOSE_GY, "%"),
    ("Skin_Max_Gy", "Skin", MetricKind.MAX_DOSE, "Gy"),
    ("LungTotal_V20Gy_pct", "Lung Total", MetricKind.VOLUME_AT_DOSE_GY, "%"),
    ("LungTotal_V30Gy_pct", "Lung Total", MetricKind.VOLUME_AT_DOSE_GY, "%"),
    ("LungIpsi_V40pct", "Lung Ipsilateral", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("LungContra_V40pct", "Lung Contralateral", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("Rectum_V65pct", "Rectum", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("Rectum_V90pct", "Rectum", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("Rectum_D0.03cc_Gy", "Rectum", MetricKind.DOSE_AT_VOLUME_CC, "Gy"),
    ("Rectum_V30Gy_pct", "Rectum", MetricKind.VOLUME_AT_DOSE_GY, "%"),
    ("Bladder_V90pct", "Bladder", MetricKind.VOLUME_AT_DOSE_PCT, "%"),
    ("Bladder_D0.03cc_Gy", "Bladder", MetricKind.DOSE_AT_VOLUME_CC, "Gy"),
    ("Bladder_V30Gy_cc", "Bladder", MetricKind.VOLUME_AT_DOSE_GY, "cc"),
    ("FemoralHeads_V50pct_cc", "Femoral Heads", MetricKind.VOLUME_AT_DOSE_PCT, "cc"),
    ("FemoralHeads_Max_Gy", "Femoral Heads", MetricKind.MAX_DOSE, "Gy"),
    ("SmallBowel_Max_Gy", "Small Bowel", MetricKind.MAX_DOSE, "Gy"),
    ("LargeBowel_Max_Gy", "Large Bowel", MetricKind.MAX_DOSE, "Gy"),
    ("BreastSkin_Max_Gy", "Breast Skin", MetricKind.MAX_DOSE, "Gy"),
)

DEFAULT_PROTOCOL_NAMES = (
    "Lung1",
    "HeadNeck1",
    "HeadNeck2",
    "HeadNeck3",
    "Breast1",
    "Breast2",
    "Prostate1",
    "Prostate2",
    "Prostate3",
)

DOSE_LIMIT_RANGE = (5.0, 80.0)
VOLUME_LIMIT_RANGE = (10.0, 100.0)
# floor for the exceedance probability, so a zero rate still yields a finite log-mean
MIN_RATE = 1e-6

ProtocolShape = Union[tuple[str, int], tuple[str, Sequence[ConstraintSpec]]]


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    protocols: Sequence[ProtocolShape] | int = 9
    plans_per_protocol: int | Sequence[int] = 69
    violation_rate: float = 0.05
    sigma_log: float = 0.25

    def __post_init__(self):
        if not 0 <= self.violation_rate < 1:
            raise InvalidConfig(f"violation_rate must lie in [0, 1), got {self.violation_rate}")
        if not self.sigma_log > 0:
            raise InvalidConfig(f"sigma_log must be positive, got {self.sigma_log}")

    def shapes(self) -> list[ProtocolShape]:
        if isinstance(self.protocols, int):
            n = self.protocols
            names = [
                DEFAULT_PROTOCOL_NAMES[i] if i < len(DEFAULT_PROTOCOL_NAMES) else f"Protocol{i + 1}"
                for i in range(n)
            ]
            # metric counts depend only on position, never on the seed
            return [(name, 4 + i % 5) for i, name in enumerate(names)]
        return list(self.protocols)

    def plan_counts(self, n_protocols: int) -> list[int]:
        if isinstance(self.plans_per_protocol, int):
            return [self.plans_per_protocol] * n_protocols
        counts = list(self.plans_per_protocol)
        if len(counts) != n_protocols:
            raise InvalidConfig(f"{len(counts)} plan counts for {n_protocols} protocols")
        return counts


def log_mean_for_rate(violation_rate: float, sigma_log: float) -> float:
    """Log-mean ``mu`` with ``P(exp(N(mu, sigma)) > 1) == violation_rate``."""
    return sigma_log * float(norm.ppf(max(violation_rate, MIN_RATE)))


def _log_uniform(rng, lo: float, hi: float) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def generate(config: SynthConfig) -> tuple[list[ProtocolSpec], list[PlanRecord]]:
    """Build protocols from the lexicon and draw lognormal plan values around their limits."""
    shapes = config.shapes()
    counts = config.plan_counts(len(shapes))
    rng = rng_stream(config.seed, "synth")
    mu = log_mean_for_rate(config.violation_rate, config.sigma_log)

    protocols: list[ProtocolSpec] = []
    plans: list[PlanRecord] = []
    for (name, shape), n_plans in zip(shapes, counts):
        if isinstance(shape, int):
            if shape > len(LEXICON):
                raise LexiconExhausted(f"{shape} metrics requested, lexicon holds {len(LEXICON)}")
            picks = rng.choice(len(LEXICON), size=shape, replace=False)
            constraints = []
            for i in sorted(picks.tolist()):
                metric_id, structure, kind, unit = LEXICON[i]
                lo, hi = DOSE_LIMIT_RANGE if kind.is_dose else VOLUME_LIMIT_RANGE
                limit = round(_log_uniform(rng, lo, hi), 2)
                constraints.append(ConstraintSpec(metric_id, structure, kind, limit, unit))
        else:
            constraints = list(shape)
        spec = validate_protocol(ProtocolSpec(name, tuple(constraints)))
        protocols.append(spec)

        for j in range(n_plans):
            draws = rng.normal(mu, config.sigma_log, size=len(spec.constraints))
            metrics = {c.metric_id: c.limit * float(math.exp(z)) for c, z in zip(spec.constraints, draws)}
            plans.append(PlanRecord(f"{name}-{j + 1:04d}", name, metrics))
    return protocols, plans
