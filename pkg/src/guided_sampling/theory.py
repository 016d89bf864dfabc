"""Exact and Monte Carlo simulation of the two-phase sampling success model.

A SyntheticModel is a discrete probability model of one question: the model
draws a concept, then produces a solution whose chance of being correct
depends on whether the concept was relevant. Conditioning on a relevant
concept multiplies the base correctness q by an amplification factor k_c > 1;
irrelevant concepts carry their own (usually small) correctness probability.

The headline quantities:

    p_rs(m)          = q, success probability of one direct sample
    p_gs(m)          = sum_r pi_c * k_c * q + sum_ir pi_c * irr_c
    condition_lhs(m) = (k_min * P(relevant) - 1) * q + sum_ir pi_c * irr_c
    lower_bound(m)   = k_min * q * P(relevant) + sum_ir pi_c * irr_c

condition_lhs > 0 is a sufficient condition for p_gs > p_rs: the gap
p_gs - p_rs exceeds condition_lhs by sum_r pi_c * (k_c - k_min) * q >= 0.
This implication is only as trustworthy as the arithmetic, so all four
quantities are computed over exact rationals (each float parameter is taken
at its exact binary value) and converted to float once on the way out. Pass
exact=True to get the Fraction itself.

The reverse implication is NOT asserted anywhere: with unequal amplification
factors a model can have p_gs > p_rs while condition_lhs <= 0, and sweep rows
report both facts so such models can be found and studied.

Whether an empty relevant set should even be allowed is a modelling choice;
here it is allowed and k_min is taken as 1 by convention so condition_lhs
stays defined (it then reduces to sum_ir pi_c * irr_c - q).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

from .errors import ModelError, QueryError

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class SyntheticModel:
    """Discrete concept/solution success model for a single question.

    concept_probs: concept id -> probability of drawing that concept.
    relevant: ids whose conditioning amplifies correctness.
    base_correct: q, the direct-sampling success probability.
    amplification: relevant id -> k_c with k_c > 1 and k_c * q <= 1.
    irrelevant_correct: irrelevant id -> success probability under it.
    """

    concept_probs: dict[str, float]
    relevant: frozenset[str]
    base_correct: float
    amplification: dict[str, float]
    irrelevant_correct: dict[str, float]

    def __post_init__(self):
        object.__setattr__(self, "concept_probs", dict(self.concept_probs))
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        object.__setattr__(self, "amplification", dict(self.amplification))
        object.__setattr__(self, "irrelevant_correct", dict(self.irrelevant_correct))
        if not self.concept_probs:
            raise ModelError("model needs at least one concept")
        ids = set(self.concept_probs)
        q = self.base_correct
        if not 0.0 <= q <= 1.0:
            raise ModelError(f"base_correct must be a probability, got {q}")
        for cid, p in self.concept_probs.items():
            if not 0.0 <= p <= 1.0:
                raise ModelError(f"concept {cid!r}: probability {p} outside [0, 1]")
        total = sum(self.concept_probs.values())
        if abs(total - 1.0) > _PROB_TOL:
            raise ModelError(f"concept probabilities sum to {total!r}, expected 1")
        if not self.relevant <= ids:
            raise ModelError("relevant set mentions unknown concept ids")
        if set(self.amplification) != set(self.relevant):
            raise ModelError("amplification must cover exactly the relevant ids")
        for cid, k in self.amplification.items():
            if k <= 1.0:
                raise ModelError(f"concept {cid!r}: amplification {k} must be > 1")
            if k * q > 1.0 + _PROB_TOL:
                raise ModelError(f"concept {cid!r}: k_c * q = {k * q} exceeds 1")
        irrelevant = ids - self.relevant
        if set(self.irrelevant_correct) != irrelevant:
            raise ModelError("irrelevant_correct must cover exactly the irrelevant ids")
        for cid, p in self.irrelevant_correct.items():
            if not 0.0 <= p <= 1.0:
                raise ModelError(f"concept {cid!r}: correctness {p} outside [0, 1]")

    @property
    def irrelevant(self) -> frozenset[str]:
        return frozenset(self.concept_probs) - self.relevant

    def success_probability(self, concept_id: str) -> float:
        """Chance of a correct solution conditioned on one drawn concept."""
        if concept_id in self.relevant:
            return min(self.amplification[concept_id] * self.base_correct, 1.0)
        return self.irrelevant_correct[concept_id]

    def to_dict(self) -> dict:
        return {
            "concept_probs": dict(sorted(self.concept_probs.items())),
            "relevant": sorted(self.relevant),
            "base_correct": self.base_correct,
            "amplification": dict(sorted(self.amplification.items())),
            "irrelevant_correct": dict(sorted(self.irrelevant_correct.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticModel":
        return cls(
            concept_probs=d["concept_probs"],
            relevant=frozenset(d["relevant"]),
            base_correct=d["base_correct"],
            amplification=d["amplification"],
            irrelevant_correct=d["irrelevant_correct"],
        )

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "SyntheticModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


Number = Union[float, Fraction]


def _maybe_float(value: Fraction, exact: bool) -> Number:
    return value if exact else float(value)


def p_rs(m: SyntheticModel, exact: bool = False) -> Number:
    """Success probability of a single direct sample (just q)."""
    return _maybe_float(Fraction(m.base_correct), exact)


def p_gs(m: SyntheticModel, exact: bool = False) -> Number:
    """Success probability of a single concept-then-solution sample."""
    q = Fraction(m.base_correct)
    total = Fraction(0)
    for cid in m.relevant:
        total += Fraction(m.concept_probs[cid]) * Fraction(m.amplification[cid]) * q
    for cid in m.irrelevant:
        total += Fraction(m.concept_probs[cid]) * Fraction(m.irrelevant_correct[cid])
    assert total <= 1 + Fraction(_PROB_TOL), "model invariants keep p_gs within [0, 1]"
    return _maybe_float(total, exact)


def k_min(m: SyntheticModel) -> float:
    """Smallest amplification over the relevant set; 1.0 when it is empty."""
    if not m.relevant:
        return 1.0
    return min(m.amplification[cid] for cid in m.relevant)


def relevant_mass(m: SyntheticModel, exact: bool = False) -> Number:
    total = sum((Fraction(m.concept_probs[cid]) for cid in m.relevant), Fraction(0))
    return _maybe_float(total, exact)


def condition_lhs(m: SyntheticModel, exact: bool = False) -> Number:
    """Sign-positive means guided beats direct sampling (sufficient, not necessary)."""
    q = Fraction(m.base_correct)
    first = (Fraction(k_min(m)) * relevant_mass(m, exact=True) - 1) * q
    second = sum(
        (Fraction(m.concept_probs[cid]) * Fraction(m.irrelevant_correct[cid]) for cid in m.irrelevant),
        Fraction(0),
    )
    return _maybe_float(first + second, exact)


def lower_bound(m: SyntheticModel, exact: bool = False) -> Number:
    """Guaranteed floor under p_gs: k_min * q * P(relevant) + irrelevant mass."""
    q = Fraction(m.base_correct)
    first = Fraction(k_min(m)) * q * relevant_mass(m, exact=True)
    second = sum(
        (Fraction(m.concept_probs[cid]) * Fraction(m.irrelevant_correct[cid]) for cid in m.irrelevant),
        Fraction(0),
    )
    return _maybe_float(first + second, exact)


def coverage_after_k(p: float, k: int) -> float:
    """Chance that k independent tries at success rate p hit at least once."""
    if not 0.0 <= p <= 1.0:
        raise QueryError(f"p must be a probability, got {p}")
    if k < 1:
        raise QueryError(f"k must be >= 1, got {k}")
    return 1.0 - (1.0 - p) ** k


def monte_carlo(m: SyntheticModel, strategy: str, trials: int, seed: int) -> float:
    """Empirical correct-rate over seeded trials; converges to p_gs or p_rs."""
    if trials < 1:
        raise QueryError("trials must be >= 1")
    if strategy not in ("rs", "guided"):
        raise QueryError(f"strategy must be 'rs' or 'guided', got {strategy!r}")
    rng = random.Random(seed)
    hits = 0
    if strategy == "rs":
        q = m.base_correct
        for _ in range(trials):
            if rng.random() < q:
                hits += 1
        return hits / trials
    ids = sorted(m.concept_probs)
    cumulative: list[tuple[float, str]] = []
    acc = 0.0
    for cid in ids:
        acc += m.concept_probs[cid]
        cumulative.append((acc, cid))
    success = {cid: m.success_probability(cid) for cid in ids}
    for _ in range(trials):
        x = rng.random()
        chosen = ids[-1]
        for bound, cid in cumulative:
            if x < bound:
                chosen = cid
                break
        if rng.random() < success[chosen]:
            hits += 1
    return hits / trials


def random_model(seed: int, num_concepts: int, enforce_assumption: bool = True) -> SyntheticModel:
    """Seeded random model; with enforce_assumption the relevant set is
    non-empty and every relevant concept has k_c in (1, 1/q]."""
    if num_concepts < 1:
        raise QueryError("num_concepts must be >= 1")
    rng = random.Random(seed)
    weights = [rng.gammavariate(1.0, 1.0) for _ in range(num_concepts)]
    total = sum(weights)
    ids = [f"c{i + 1}" for i in range(num_concepts)]
    probs = {cid: w / total for cid, w in zip(ids, weights)}
    q = rng.uniform(0.02, 0.5)

    relevant = {cid for cid in ids if rng.random() < 0.5}
    if enforce_assumption and not relevant:
        relevant = {rng.choice(ids)}

    amplification = {}
    for cid in sorted(relevant):
        k = rng.uniform(1.0, 1.0 / q)
        if k <= 1.0:
            k = 1.0 + (1.0 / q - 1.0) / 2.0
        amplification[cid] = k
    irrelevant_correct = {cid: rng.uniform(0.0, q) for cid in ids if cid not in relevant}
    return SyntheticModel(
        concept_probs=probs,
        relevant=frozenset(relevant),
        base_correct=q,
        amplification=amplification,
        irrelevant_correct=irrelevant_correct,
    )


@dataclass(frozen=True)
class SweepRow:
    seed: int
    p_rs: float
    p_gs: float
    condition_lhs: float
    satisfied: bool  # condition_lhs > 0 (exact comparison)
    sufficiency_holds: bool  # condition_lhs > 0 implies p_gs > p_rs


def sweep_models(
    count: int,
    base_seed: int,
    num_concepts: Optional[int] = None,
    enforce_assumption: bool = True,
) -> list[SweepRow]:
    """Generate seeded models and evaluate the sufficiency condition on each.

    num_concepts=None draws a size in [2, 8] per model. Comparisons run on
    exact rationals, so `sufficiency_holds` reports the mathematical fact,
    not a float artifact.
    """
    rows = []
    sizer = random.Random(f"sweep-sizes|{base_seed}")
    for i in range(count):
        seed = base_seed + i
        n = num_concepts if num_concepts is not None else sizer.randint(2, 8)
        m = random_model(seed, n, enforce_assumption=enforce_assumption)
        rs_exact = p_rs(m, exact=True)
        gs_exact = p_gs(m, exact=True)
        cond_exact = condition_lhs(m, exact=True)
        satisfied = cond_exact > 0
        rows.append(
            SweepRow(
                seed=seed,
                p_rs=float(rs_exact),
                p_gs=float(gs_exact),
                condition_lhs=float(cond_exact),
                satisfied=satisfied,
                sufficiency_holds=(not satisfied) or gs_exact > rs_exact,
            )
        )
    return rows


SWEEP_CSV_HEADER = "seed,p_rs,p_gs,condition_lhs,satisfied,sufficiency_holds"


def sweep_to_csv(rows: list[SweepRow]) -> str:
    lines = [SWEEP_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r.seed},{r.p_rs!r},{r.p_gs!r},{r.condition_lhs!r},"
            f"{str(r.satisfied).lower()},{str(r.sufficiency_holds).lower()}"
        )
    return "\n".join(lines) + "\n"
