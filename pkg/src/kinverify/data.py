"""Embedding stores, labeled pair/tri sets, CSV I/O and pair construction.

File formats (UTF-8, LF line endings, floats written with ``repr`` so a
load/save round trip is byte identical):

* embeddings: ``person_id,family_id,gender,f0,...,f{d-1}`` with gender M/F
* pairs:      ``id1,id2,relation,label`` with label ``kin``/``nonkin``
* tri:        ``father_id,mother_id,child_id,label``

Malformed rows abort with a line-numbered error instead of being skipped;
silent skips would corrupt downstream accuracy statistics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .relations import (
    Gender,
    KinshipRelation,
    genders_match,
    is_symmetric,
    role2_gender,
)
from .seeding import STREAM_RESAMPLE, derive_rng


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


class PairLabel(enum.Enum):
    KIN = "kin"
    NONKIN = "nonkin"

    @classmethod
    def from_code(cls, code: str) -> "PairLabel":
        try:
            return cls(code)
        except ValueError:
            raise ValueError(f"unknown label {code!r}, expected 'kin' or 'nonkin'") from None


@dataclass(frozen=True)
class PersonRef:
    person_id: str
    family_id: str
    gender: Gender


class EmbeddingStore:
    """Immutable collection of persons with one embedding row each.

    Rows keep insertion order, which is also the canonical serialization
    order. The embedding matrix is a read-only float64 array of shape
    (n_persons, dim).
    """

    def __init__(self, dim: int, rows: list[tuple[PersonRef, np.ndarray]]):
        if dim <= 0:
            raise ValueError(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self._refs: dict[str, PersonRef] = {}
        self._row: dict[str, int] = {}
        self._families: dict[str, list[str]] = {}
        matrix = np.zeros((len(rows), dim), dtype=np.float64)
        for i, (ref, vec) in enumerate(rows):
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(
                    f"embedding for {ref.person_id!r} has shape {vec.shape}, expected ({dim},)"
                )
            if not np.isfinite(vec).all():
                raise ValueError(f"embedding for {ref.person_id!r} has non-finite entries")
            if ref.person_id in self._refs:
                raise ValueError(f"duplicate person_id {ref.person_id!r}")
            if not ref.family_id:
                raise ValueError(f"person {ref.person_id!r} has an empty family_id")
            self._refs[ref.person_id] = ref
            self._row[ref.person_id] = i
            self._families.setdefault(ref.family_id, []).append(ref.person_id)
            matrix[i] = vec
        matrix.setflags(write=False)
        self.matrix = matrix

    def __len__(self) -> int:
        return len(self._refs)

    def __contains__(self, person_id: str) -> bool:
        return person_id in self._refs

    @property
    def person_ids(self) -> tuple[str, ...]:
        return tuple(self._refs)

    @property
    def family_ids(self) -> tuple[str, ...]:
        return tuple(self._families)

    def person(self, person_id: str) -> PersonRef:
        try:
            return self._refs[person_id]
        except KeyError:
            raise KeyError(f"unknown person_id {person_id!r}") from None

    def embedding(self, person_id: str) -> np.ndarray:
        return self.matrix[self.row(person_id)]

    def row(self, person_id: str) -> int:
        try:
            return self._row[person_id]
        except KeyError:
            raise KeyError(f"unknown person_id {person_id!r}") from None

    def family_members(self, family_id: str) -> tuple[str, ...]:
        return tuple(self._families.get(family_id, ()))

    def family_of(self, person_id: str) -> str:
        return self.person(person_id).family_id


@dataclass(frozen=True)
class KinPair:
    id1: str
    id2: str
    relation: KinshipRelation
    label: PairLabel


@dataclass(frozen=True)
class TriSample:
    father_id: str
    mother_id: str
    child_id: str
    child_gender: Gender
    label: PairLabel


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[KinPair, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass(frozen=True)
class TriSet:
    samples: tuple[TriSample, ...]
    provenance: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)


def concat_features(f1: np.ndarray, f2: np.ndarray) -> np.ndarray:
    """Concatenate two embeddings into one feature of twice the length."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape or f1.ndim != 1:
        raise ValueError(f"cannot concatenate shapes {f1.shape} and {f2.shape}")
    return np.concatenate([f1, f2])


def cosine_distance(f1: np.ndarray, f2: np.ndarray) -> float:
    """1 minus cosine similarity; 0 for parallel vectors, 2 for antipodal."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    n1 = np.linalg.norm(f1)
    n2 = np.linalg.norm(f2)
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("cosine distance is undefined for zero-norm vectors")
    return float(1.0 - np.dot(f1, f2) / (n1 * n2))


def _format_float(x: float) -> str:
    return repr(float(x))


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    path = Path(path)
    cols = ",".join(f"f{i}" for i in range(store.dim))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"person_id,family_id,gender,{cols}\n")
        for pid in store.person_ids:
            ref = store.person(pid)
            values = ",".join(_format_float(v) for v in store.embedding(pid))
            fh.write(f"{pid},{ref.family_id},{ref.gender.value},{values}\n")


def load_embeddings(path: str | Path) -> EmbeddingStore:
    """Parse an embedding CSV; dim is inferred from the header."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, expected a header line")
    header = lines[0].split(",")
    if header[:3] != ["person_id", "family_id", "gender"]:
        raise DataFormatError(
            f"{path}, line 1: header must start with person_id,family_id,gender"
        )
    dim = len(header) - 3
    expected_cols = [f"f{i}" for i in range(dim)]
    if dim <= 0 or header[3:] != expected_cols:
        raise DataFormatError(f"{path}, line 1: feature columns must be f0..f{{d-1}}")

    rows: list[tuple[PersonRef, np.ndarray]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            raise DataFormatError(f"{path}, line {lineno}: blank line")
        parts = line.split(",")
        if len(parts) != 3 + dim:
            raise DataFormatError(
                f"{path}, line {lineno}: expected {3 + dim} fields, got {len(parts)}"
            )
        pid, fam, gender_code = parts[0], parts[1], parts[2]
        if pid in seen:
            raise DataFormatError(f"{path}, line {lineno}: duplicate person_id {pid!r}")
        if not fam:
            raise DataFormatError(f"{path}, line {lineno}: empty family_id")
        try:
            gender = Gender.from_code(gender_code)
            values = np.array([float(v) for v in parts[3:]], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"{path}, line {lineno}: {exc}") from None
        if not np.isfinite(values).all():
            raise DataFormatError(f"{path}, line {lineno}: non-finite embedding value")
        seen.add(pid)
        rows.append((PersonRef(pid, fam, gender), values))
    return EmbeddingStore(dim, rows)


def validate_pair(pair: KinPair, store: EmbeddingStore) -> None:
    """Check a pair against the store; raises ValueError with the reason."""
    for pid in (pair.id1, pair.id2):
        if pid not in store:
            raise ValueError(f"unknown person_id {pid!r}")
    if pair.id1 == pair.id2:
        raise ValueError(f"pair references the same person twice: {pair.id1!r}")
    g1 = store.person(pair.id1).gender
    g2 = store.person(pair.id2).gender
    if not genders_match(pair.relation, g1, g2):
        raise ValueError(
            f"genders ({g1.value},{g2.value}) do not fit relation {pair.relation.value}"
        )
    same_family = store.family_of(pair.id1) == store.family_of(pair.id2)
    if pair.label is PairLabel.KIN and not same_family:
        raise ValueError("kin pair spans two families")
    if pair.label is PairLabel.NONKIN and same_family:
        raise ValueError("nonkin pair within a single family")


def validate_tri(sample: TriSample, store: EmbeddingStore) -> None:
    for pid in (sample.father_id, sample.mother_id, sample.child_id):
        if pid not in store:
            raise ValueError(f"unknown person_id {pid!r}")
    if store.person(sample.father_id).gender is not Gender.MALE:
        raise ValueError(f"father {sample.father_id!r} is not male")
    if store.person(sample.mother_id).gender is not Gender.FEMALE:
        raise ValueError(f"mother {sample.mother_id!r} is not female")
    if store.person(sample.child_id).gender is not sample.child_gender:
        raise ValueError(f"child gender mismatch for {sample.child_id!r}")
    fam_f = store.family_of(sample.father_id)
    fam_m = store.family_of(sample.mother_id)
    fam_c = store.family_of(sample.child_id)
    if fam_f != fam_m:
        raise ValueError("father and mother belong to different families")
    if sample.label is PairLabel.KIN and fam_c != fam_f:
        raise ValueError("kin tri-sample child from a different family")
    if sample.label is PairLabel.NONKIN and fam_c == fam_f:
        raise ValueError("nonkin tri-sample child from the parents' family")


def save_pairs(pairs: PairSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("id1,id2,relation,label\n")
        for p in pairs:
            fh.write(f"{p.id1},{p.id2},{p.relation.value},{p.label.value}\n")


def load_pairs(path: str | Path, store: EmbeddingStore) -> PairSet:
    """Parse a pairs CSV, validating every row against the store."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "id1,id2,relation,label":
        raise DataFormatError(f"{path}, line 1: expected header 'id1,id2,relation,label'")
    pairs: list[KinPair] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise DataFormatError(f"{path}, line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            pair = KinPair(
                id1=parts[0],
                id2=parts[1],
                relation=KinshipRelation.from_code(parts[2]),
                label=PairLabel.from_code(parts[3]),
            )
            validate_pair(pair, store)
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"{path}, line {lineno}: {exc}") from None
        pairs.append(pair)
    return PairSet(tuple(pairs), provenance=str(path))


def save_tri(tris: TriSet, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("father_id,mother_id,child_id,label\n")
        for t in tris:
            fh.write(f"{t.father_id},{t.mother_id},{t.child_id},{t.label.value}\n")


def load_tri(path: str | Path, store: EmbeddingStore) -> TriSet:
    """Parse a tri-subject CSV; child gender comes from the store."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "father_id,mother_id,child_id,label":
        raise DataFormatError(
            f"{path}, line 1: expected header 'father_id,mother_id,child_id,label'"
        )
    samples: list[TriSample] = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise DataFormatError(f"{path}, line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            child_gender = store.person(parts[2]).gender if parts[2] in store else Gender.MALE
            sample = TriSample(
                father_id=parts[0],
                mother_id=parts[1],
                child_id=parts[2],
                child_gender=child_gender,
                label=PairLabel.from_code(parts[3]),
            )
            validate_tri(sample, store)
        except (ValueError, KeyError) as exc:
            raise DataFormatError(f"{path}, line {lineno}: {exc}") from None
        samples.append(sample)
    return TriSet(tuple(samples), provenance=str(path))


def augment_symmetric(pairs: PairSet) -> PairSet:
    """Duplicate and swap every pair whose relation is symmetric.

    Originals keep their order; reversed copies are appended afterwards, so
    the output size is 2*n_symmetric + n_asymmetric.
    """
    reversed_pairs = [
        KinPair(p.id2, p.id1, p.relation, p.label)
        for p in pairs
        if is_symmetric(p.relation)
    ]
    note = f"{pairs.provenance}+swapped" if pairs.provenance else "swapped"
    return PairSet(tuple(pairs.pairs) + tuple(reversed_pairs), provenance=note)


def resample_nonkin(
    kin_pairs: PairSet,
    store: EmbeddingStore,
    base_seed: int,
    epoch: int,
) -> PairSet:
    """Build one nonkin pair per kin pair by swapping in a cross-family partner.

    Each output keeps id1 and the relation of its source pair; id2 is drawn
    uniformly from persons whose gender fits role 2 and whose family differs
    from id1's. The draw order is the input pair order with one draw per
    pair, seeded from (base_seed, epoch) via :mod:`kinverify.seeding`, so a
    given epoch replays exactly while distinct epochs differ.
    """
    rng = derive_rng(base_seed, STREAM_RESAMPLE, epoch)
    ids = np.array(store.person_ids)
    genders = np.array([store.person(pid).gender.value for pid in ids])
    families = np.array([store.person(pid).family_id for pid in ids])
    by_gender = {g: np.flatnonzero(genders == g.value) for g in Gender}

    cache: dict[tuple[Gender, str], np.ndarray] = {}
    out: list[KinPair] = []
    for pair in kin_pairs:
        g1 = store.person(pair.id1).gender
        want = role2_gender(pair.relation, g1)
        fam1 = store.family_of(pair.id1)
        key = (want, fam1)
        candidates = cache.get(key)
        if candidates is None:
            pool = by_gender[want]
            candidates = pool[families[pool] != fam1]
            cache[key] = candidates
        if candidates.size == 0:
            raise ValueError(
                f"no eligible nonkin partner for relation {pair.relation.value} "
                f"outside family {fam1!r}"
            )
        pick = candidates[rng.integers(candidates.size)]
        out.append(KinPair(pair.id1, str(ids[pick]), pair.relation, PairLabel.NONKIN))
    note = f"nonkin(seed={base_seed},epoch={epoch})"
    return PairSet(tuple(out), provenance=note)


def pairs_to_arrays(
    store: EmbeddingStore,
    pairs: PairSet | list[KinPair],
    relation_codes: tuple[str, ...],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorize pairs into (features, relation indices, kin targets).

    Features are the concatenated embeddings, shape (n, 2*dim). Relation
    indices follow ``relation_codes`` (a model's expert order).
    """
    plist = list(pairs)
    idx_of = {code: i for i, code in enumerate(relation_codes)}
    rows1 = np.fromiter((store.row(p.id1) for p in plist), dtype=np.intp, count=len(plist))
    rows2 = np.fromiter((store.row(p.id2) for p in plist), dtype=np.intp, count=len(plist))
    features = np.concatenate([store.matrix[rows1], store.matrix[rows2]], axis=1)
    rel_idx = np.fromiter(
        (idx_of[p.relation.value] for p in plist), dtype=np.intp, count=len(plist)
    )
    targets = np.fromiter(
        (1.0 if p.label is PairLabel.KIN else 0.0 for p in plist),
        dtype=np.float64,
        count=len(plist),
    )
    return features, rel_idx, targets
