"""Kinship relation taxonomy and encodings.

Eleven relation codes spanning same-generation (BB, SIBS, SS), parent-child
(FD, FS, MD, MS) and grandparent-grandchild (GFGD, GFGS, GMGD, GMGS) pairs.
``RELATION_ORDER`` fixes the canonical index 0..10 used everywhere: expert
ordering, report rows and serialized models all follow it.
"""

from __future__ import annotations

import enum

import numpy as np


class Gender(enum.Enum):
    MALE = "M"
    FEMALE = "F"

    @property
    def opposite(self) -> "Gender":
        return Gender.FEMALE if self is Gender.MALE else Gender.MALE

    @classmethod
    def from_code(cls, code: str) -> "Gender":
        try:
            return cls(code)
        except ValueError:
            raise ValueError(f"unknown gender code {code!r}, expected 'M' or 'F'") from None


class KinshipRelation(enum.Enum):
    BB = "BB"
    SIBS = "SIBS"
    SS = "SS"
    FD = "FD"
    FS = "FS"
    MD = "MD"
    MS = "MS"
    GFGD = "GFGD"
    GFGS = "GFGS"
    GMGD = "GMGD"
    GMGS = "GMGS"

    @classmethod
    def from_code(cls, code: str) -> "KinshipRelation":
        try:
            return cls(code)
        except ValueError:
            known = ", ".join(r.value for r in cls)
            raise ValueError(f"unknown relation code {code!r}, expected one of {known}") from None


RELATION_ORDER: tuple[KinshipRelation, ...] = tuple(KinshipRelation)
N_RELATIONS = len(RELATION_ORDER)

_INDEX = {relation: i for i, relation in enumerate(RELATION_ORDER)}

# Ordered (role1, role2) genders. SIBS accepts either orientation of an
# opposite-gender pair and therefore carries no fixed entry here.
_ROLE_GENDERS: dict[KinshipRelation, tuple[Gender, Gender]] = {
    KinshipRelation.BB: (Gender.MALE, Gender.MALE),
    KinshipRelation.SS: (Gender.FEMALE, Gender.FEMALE),
    KinshipRelation.FD: (Gender.MALE, Gender.FEMALE),
    KinshipRelation.FS: (Gender.MALE, Gender.MALE),
    KinshipRelation.MD: (Gender.FEMALE, Gender.FEMALE),
    KinshipRelation.MS: (Gender.FEMALE, Gender.MALE),
    KinshipRelation.GFGD: (Gender.MALE, Gender.FEMALE),
    KinshipRelation.GFGS: (Gender.MALE, Gender.MALE),
    KinshipRelation.GMGD: (Gender.FEMALE, Gender.FEMALE),
    KinshipRelation.GMGS: (Gender.FEMALE, Gender.MALE),
}

SYMMETRIC_RELATIONS = frozenset(
    {KinshipRelation.BB, KinshipRelation.SIBS, KinshipRelation.SS}
)

OPPOSITE_GENDER_RELATIONS = frozenset(
    {
        KinshipRelation.SIBS,
        KinshipRelation.FD,
        KinshipRelation.MS,
        KinshipRelation.GFGD,
        KinshipRelation.GMGS,
    }
)

SAME_GENDER_RELATIONS = frozenset(RELATION_ORDER) - OPPOSITE_GENDER_RELATIONS


def relation_index(relation: KinshipRelation) -> int:
    """Canonical index of ``relation``: BB is 0, GMGS is 10."""
    return _INDEX[relation]


def index_to_relation(index: int) -> KinshipRelation:
    if not 0 <= index < N_RELATIONS:
        raise ValueError(f"relation index out of range: {index}")
    return RELATION_ORDER[index]


def one_hot(relation: KinshipRelation) -> np.ndarray:
    """Length-11 indicator vector with a one at the canonical index."""
    vec = np.zeros(N_RELATIONS, dtype=np.float64)
    vec[_INDEX[relation]] = 1.0
    return vec


def is_symmetric(relation: KinshipRelation) -> bool:
    return relation in SYMMETRIC_RELATIONS


def genders_match(relation: KinshipRelation, gender1: Gender, gender2: Gender) -> bool:
    """True when (gender1, gender2) is a valid role assignment for ``relation``."""
    if relation is KinshipRelation.SIBS:
        return gender1 is not gender2
    return _ROLE_GENDERS[relation] == (gender1, gender2)


def role2_gender(relation: KinshipRelation, gender1: Gender) -> Gender:
    """Gender required of the second role, given the first person's gender."""
    if relation is KinshipRelation.SIBS:
        return gender1.opposite
    return _ROLE_GENDERS[relation][1]


def role_genders(relation: KinshipRelation) -> tuple[Gender, Gender] | None:
    """Fixed (role1, role2) genders, or None for SIBS (either orientation)."""
    return _ROLE_GENDERS.get(relation)
