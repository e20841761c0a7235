"""Label vocabularies for instruments, verbs, targets and the triplet dictionary."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence, Tuple

from .errors import VocabularyError

# Sentinel triplet id for component tuples outside the dictionary.
INVALID_TRIPLET = -1


@dataclass(frozen=True)
class LabelVocabulary:
    """Ordered class lists plus the triplet dictionary.

    ``triplets[k]`` is the (instrument_id, verb_id, target_id) tuple of
    triplet class ``k``.  The verb list does not include the background
    class; the verb head appends one extra slot (``num_verb_logits``).
    """

    instruments: Tuple[str, ...]
    verbs: Tuple[str, ...]
    targets: Tuple[str, ...]
    triplets: Tuple[Tuple[int, int, int], ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instruments", tuple(self.instruments))
        object.__setattr__(self, "verbs", tuple(self.verbs))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "triplets", tuple(tuple(t) for t in self.triplets))
        if not (self.instruments and self.verbs and self.targets):
            raise VocabularyError("vocabulary has an empty component list")
        seen = {}
        for k, (i, v, t) in enumerate(self.triplets):
            if len(self.triplets[k]) != 3:
                raise VocabularyError(f"triplet {k} is not a 3-tuple")
            if not (0 <= i < len(self.instruments)):
                raise VocabularyError(f"triplet {k}: instrument id {i} out of range")
            if not (0 <= v < len(self.verbs)):
                raise VocabularyError(f"triplet {k}: verb id {v} out of range")
            if not (0 <= t < len(self.targets)):
                raise VocabularyError(f"triplet {k}: target id {t} out of range")
            if (i, v, t) in seen:
                raise VocabularyError(f"duplicate triplet {(i, v, t)} at {seen[(i, v, t)]} and {k}")
            seen[(i, v, t)] = k
        object.__setattr__(self, "_index", seen)

    @property
    def num_instruments(self) -> int:
        return len(self.instruments)

    @property
    def num_verbs(self) -> int:
        return len(self.verbs)

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def num_triplets(self) -> int:
        return len(self.triplets)

    @property
    def background_verb(self) -> int:
        """Id of the extra no-interaction verb slot (last logit)."""
        return len(self.verbs)

    @property
    def num_verb_logits(self) -> int:
        return len(self.verbs) + 1

    def triplet_components(self, triplet_id: int) -> Tuple[int, int, int]:
        if not (0 <= triplet_id < len(self.triplets)):
            raise IndexError(f"triplet id {triplet_id} out of range [0, {len(self.triplets)})")
        return self.triplets[triplet_id]

    def triplet_id(self, instrument_id: int, verb_id: int, target_id: int) -> int:
        """Inverse lookup; returns INVALID_TRIPLET for tuples not in the dictionary."""
        return self._index.get((instrument_id, verb_id, target_id), INVALID_TRIPLET)

    def triplets_of_instrument(self, instrument_id: int) -> Tuple[int, ...]:
        return tuple(k for k, (i, _, _) in enumerate(self.triplets) if i == instrument_id)

    def to_dict(self) -> dict:
        return {
            "instruments": list(self.instruments),
            "verbs": list(self.verbs),
            "targets": list(self.targets),
            "triplets": [list(t) for t in self.triplets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelVocabulary":
        try:
            return cls(d["instruments"], d["verbs"], d["targets"],
                       [tuple(t) for t in d["triplets"]])
        except KeyError as e:
            raise VocabularyError(f"vocabulary section missing key {e}") from e

    def digest(self) -> str:
        """Stable hash used to pair checkpoints with datasets."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def toy_vocabulary(rule: dict | None = None,
                   instruments: Sequence[str] = ("grasper", "hook", "scissors"),
                   verbs: Sequence[str] = ("retract", "coagulate", "cut"),
                   targets: Sequence[str] = ("gallbladder", "liver", "fat", "peritoneum"),
                   ) -> LabelVocabulary:
    """Desk-scale vocabulary whose triplet dictionary is generated from an
    (instrument, target) -> verb rule table.  Default rule: (i + t) mod |verbs|.
    """
    if rule is None:
        rule = {(i, t): (i + t) % len(verbs)
                for i in range(len(instruments)) for t in range(len(targets))}
    triplets = sorted((i, v, t) for (i, t), v in rule.items())
    return LabelVocabulary(tuple(instruments), tuple(verbs), tuple(targets), tuple(triplets))
