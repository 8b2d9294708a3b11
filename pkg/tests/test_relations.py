import pytest

from kinverify.relations import (
    Gender,
    KinshipRelation,
    N_RELATIONS,
    RELATION_ORDER,
    genders_match,
    index_to_relation,
    is_symmetric,
    one_hot,
    relation_index,
    role2_gender,
)


def test_canonical_order_endpoints():
    assert relation_index(KinshipRelation.BB) == 0
    assert relation_index(KinshipRelation.GMGS) == 10
    assert N_RELATIONS == 11


def test_relation_index_is_bijection():
    indices = {relation_index(r) for r in KinshipRelation}
    assert indices == set(range(11))
    for r in KinshipRelation:
        assert index_to_relation(relation_index(r)) is r


def test_index_to_relation_rejects_out_of_range():
    with pytest.raises(ValueError):
        index_to_relation(11)
    with pytest.raises(ValueError):
        index_to_relation(-1)


def test_one_hot():
    bb = one_hot(KinshipRelation.BB)
    assert bb.tolist() == [1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
    fd = one_hot(KinshipRelation.FD)
    assert fd[3] == 1.0 and fd.sum() == 1.0
    for r in KinshipRelation:
        assert one_hot(r).sum() == 1.0


def test_symmetric_relations():
    symmetric = {r for r in KinshipRelation if is_symmetric(r)}
    assert symmetric == {KinshipRelation.BB, KinshipRelation.SS, KinshipRelation.SIBS}


def test_role_genders():
    M, F = Gender.MALE, Gender.FEMALE
    assert genders_match(KinshipRelation.FD, M, F)
    assert not genders_match(KinshipRelation.FD, F, F)
    assert genders_match(KinshipRelation.BB, M, M)
    # SIBS takes either orientation of an opposite-gender pair
    assert genders_match(KinshipRelation.SIBS, M, F)
    assert genders_match(KinshipRelation.SIBS, F, M)
    assert not genders_match(KinshipRelation.SIBS, M, M)


def test_role2_gender():
    M, F = Gender.MALE, Gender.FEMALE
    assert role2_gender(KinshipRelation.FD, M) is F
    assert role2_gender(KinshipRelation.GMGS, F) is M
    assert role2_gender(KinshipRelation.SIBS, M) is F
    assert role2_gender(KinshipRelation.SIBS, F) is M


def test_gender_codes():
    assert Gender.from_code("M") is Gender.MALE
    assert Gender.MALE.opposite is Gender.FEMALE
    with pytest.raises(ValueError):
        Gender.from_code("X")
