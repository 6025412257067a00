"""Disclosure-control transforms: suppression, pseudonymisation, randomisation.

Suppression replaces every count strictly between zero and the threshold
(five by default) with a suppressed marker.  True zeros are kept unless
``suppress_zero`` is set: a zero discloses only absence, and atlas-style
outputs display zeros.  The suppression log records how many cells were
hidden per stratum, never which ones or what they held.

Pseudonyms come from a keyed hash so the same seed always produces the
same injective token mapping, and the original identifier never appears
inside its pseudonym.  Randomisation perturbs counts with seeded uniform
integer noise, clamped at zero; it runs before suppression when both are
configured.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import PrivacyError
from .model import (
    CellKind,
    CellValue,
    Dataset,
    StandardRecord,
    canonical_sort,
    finalize,
)


@dataclass(frozen=True)
class SuppressionPolicy:
    threshold: int = 5
    suppress_zero: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.threshold, int) or self.threshold < 1:
            raise PrivacyError(f"suppression threshold must be a positive integer, got {self.threshold!r}")

    @classmethod
    def from_json(cls, doc: Mapping) -> "SuppressionPolicy":
        return cls(threshold=doc.get("threshold", 5), suppress_zero=bool(doc.get("suppress_zero", False)))

    def to_json(self) -> dict:
        return {"threshold": self.threshold, "suppress_zero": self.suppress_zero}


@dataclass(frozen=True)
class SuppressionLog:
    """Per-stratum counts of suppressed cells; values are never recorded."""

    strata: tuple[tuple[tuple[int, str, str], int], ...]
    total: int

    def to_json(self) -> dict:
        return {
            "strata": [
                {
                    "calendar_year": stratum[0],
                    "age_group": stratum[1],
                    "sex": stratum[2],
                    "suppressed_cell_count": count,
                }
                for stratum, count in self.strata
            ],
            "total_suppressed": self.total,
        }


def suppress(dataset: Dataset, policy: SuppressionPolicy) -> tuple[Dataset, SuppressionLog]:
    """Hide small counts: 0 < magnitude < threshold (and zero when configured)."""
    if dataset.indicator.value_kind is not CellKind.COUNT:
        raise PrivacyError(
            "suppression applies to count datasets only; suppress rates and "
            "percentages upstream through their numerator counts"
        )
    records: list[StandardRecord] = []
    per_stratum: dict[tuple[int, str, str], int] = {}
    for record in dataset.records:
        value = record.value
        hide = False
        if value.kind is CellKind.COUNT:
            if 0 < value.magnitude < policy.threshold:
                hide = True
            elif policy.suppress_zero and value.magnitude == 0:
                hide = True
        if hide:
            per_stratum[record.key.stratum] = per_stratum.get(record.key.stratum, 0) + 1
            records.append(StandardRecord(record.key, CellValue.suppressed(value.uncertainty)))
        else:
            records.append(record)
    log = SuppressionLog(
        strata=tuple(sorted(per_stratum.items())),
        total=sum(per_stratum.values()),
    )
    return finalize(dataset.with_records(records)), log


@dataclass(frozen=True)
class PseudonymMap:
    """Stable injective identifier replacement keyed by a seed."""

    seed: str
    assignments: tuple[tuple[str, str], ...] = ()

    def mapping(self) -> dict[str, str]:
        return dict(self.assignments)

    def to_json(self) -> dict:
        return {"seed": self.seed, "assignments": [list(pair) for pair in self.assignments]}

    @classmethod
    def from_json(cls, doc: Mapping) -> "PseudonymMap":
        return cls(seed=doc["seed"], assignments=tuple((a, b) for a, b in doc["assignments"]))


def _derive_pseudonym(seed: str, token: str, attempt: int) -> str:
    digest = hashlib.blake2b(
        f"{token}#{attempt}".encode("utf-8"),
        key=hashlib.sha256(seed.encode("utf-8")).digest()[:32],
        digest_size=8,
    ).hexdigest()
    return f"ps-{digest}"


def pseudonymize(column: Sequence[str], pmap: PseudonymMap) -> tuple[tuple[str, ...], PseudonymMap]:
    """Replace identifier tokens with stable pseudonyms; returns the updated map."""
    mapping = pmap.mapping()
    used = set(mapping.values())
    out: list[str] = []
    for token in column:
        pseudonym = mapping.get(token)
        if pseudonym is None:
            attempt = 0
            while True:
                candidate = _derive_pseudonym(pmap.seed, token, attempt)
                collision = candidate in used
                leaks = token in candidate
                if not collision and not leaks:
                    pseudonym = candidate
                    break
                attempt += 1
                if attempt > 10_000:
                    raise PrivacyError(f"could not derive a pseudonym for token {token!r}")
            mapping[token] = pseudonym
            used.add(pseudonym)
        out.append(pseudonym)
    updated = PseudonymMap(pmap.seed, tuple(sorted(mapping.items())))
    return tuple(out), updated


def randomize(dataset: Dataset, noise_magnitude: int, seed) -> Dataset:
    """Perturb counts by uniform integer noise in [-k, +k], clamped at zero.

    Seeded and reproducible; draws follow canonical record order.  Zero
    magnitude is the identity.
    """
    if not isinstance(noise_magnitude, int) or isinstance(noise_magnitude, bool) or noise_magnitude < 0:
        raise PrivacyError(f"noise magnitude must be a non-negative integer, got {noise_magnitude!r}")
    if dataset.indicator.value_kind is not CellKind.COUNT:
        raise PrivacyError("randomisation applies to count datasets only")
    if noise_magnitude == 0:
        return dataset
    rng = random.Random(f"{seed}:{dataset.indicator.id}")
    ordered = canonical_sort(dataset)
    records: list[StandardRecord] = []
    for record in ordered.records:
        value = record.value
        if value.kind is CellKind.COUNT:
            noise = rng.randint(-noise_magnitude, noise_magnitude)
            perturbed = max(0, value.magnitude + noise)
            records.append(StandardRecord(record.key, CellValue.count(perturbed, value.uncertainty)))
        else:
            records.append(record)
    return finalize(ordered.with_records(records))
