import numpy as np
import numpy.testing as npt
import pytest

from kinverify.data import (
    DataFormatError,
    EmbeddingStore,
    KinPair,
    PairLabel,
    PairSet,
    PersonRef,
    augment_symmetric,
    concat_features,
    cosine_distance,
    load_embeddings,
    load_pairs,
    load_tri,
    resample_nonkin,
    save_embeddings,
    save_pairs,
    save_tri,
    TriSample,
    TriSet,
)
from kinverify.relations import Gender, KinshipRelation


def small_store():
    rows = [
        (PersonRef("a", "f1", Gender.MALE), np.array([1.0, 0.0, 0.0, 0.0])),
        (PersonRef("b", "f1", Gender.FEMALE), np.array([0.0, 1.0, 0.0, 0.0])),
        (PersonRef("c", "f2", Gender.FEMALE), np.array([0.0, 0.0, 1.0, 0.0])),
        (PersonRef("d", "f2", Gender.MALE), np.array([0.5, 0.5, 0.0, 0.0])),
        (PersonRef("e", "f3", Gender.FEMALE), np.array([0.25, 0.1, 0.3, 1.0])),
    ]
    return EmbeddingStore(4, rows)


def test_concat_features():
    out = concat_features(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
    assert out.tolist() == [1.0, 2.0, 3.0, 4.0]
    zeros = concat_features(np.array([1.0, 2.0]), np.zeros(2))
    assert zeros[2:].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        concat_features(np.ones(3), np.ones(2))


def test_concat_length_for_default_dim():
    f = np.ones(512)
    assert concat_features(f, f).shape == (1024,)


def test_cosine_distance_basics():
    v = np.array([0.3, -1.2, 2.0])
    assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-12)
    assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert cosine_distance(v, 3.0 * v) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        cosine_distance(np.zeros(3), v)


def test_cosine_distance_properties():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = rng.standard_normal(6)
        b = rng.standard_normal(6)
        d = cosine_distance(a, b)
        assert 0.0 - 1e-12 <= d <= 2.0 + 1e-12
        assert d == pytest.approx(cosine_distance(b, a), abs=1e-12)
        assert d == pytest.approx(cosine_distance(1.7 * a, b), abs=1e-10)


def test_embeddings_roundtrip_byte_identical(tmp_path):
    store = small_store()
    p1 = tmp_path / "emb.csv"
    p2 = tmp_path / "emb2.csv"
    save_embeddings(store, p1)
    loaded = load_embeddings(p1)
    assert len(loaded) == 5 and loaded.dim == 4
    npt.assert_array_equal(loaded.matrix, store.matrix)
    save_embeddings(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_embeddings_header_only(tmp_path):
    path = tmp_path / "emb.csv"
    path.write_text("person_id,family_id,gender,f0,f1,f2\n")
    store = load_embeddings(path)
    assert len(store) == 0 and store.dim == 3


def test_load_embeddings_errors_name_lines(tmp_path):
    path = tmp_path / "emb.csv"
    path.write_text(
        "person_id,family_id,gender,f0,f1\n"
        "a,f1,M,0.5,0.5\n"
        "b,f1,F,1.0,0.0\n"
        "a,f2,M,0.1,0.2\n"
    )
    with pytest.raises(DataFormatError, match="line 4"):
        load_embeddings(path)

    path.write_text("person_id,family_id,gender,f0,f1\na,f1,M,0.5\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_embeddings(path)

    path.write_text("person_id,family_id,gender,f0,f1\na,f1,X,0.5,0.1\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_embeddings(path)


def test_load_pairs_validation(tmp_path):
    store = small_store()
    path = tmp_path / "pairs.csv"
    path.write_text("id1,id2,relation,label\na,b,FD,kin\n")
    pairs = load_pairs(path, store)
    assert pairs.pairs[0] == KinPair("a", "b", KinshipRelation.FD, PairLabel.KIN)

    # gender mismatch: b is female, BB needs two males
    path.write_text("id1,id2,relation,label\na,b,BB,kin\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_pairs(path, store)

    path.write_text("id1,id2,relation,label\na,zz,FD,kin\n")
    with pytest.raises(DataFormatError, match="zz"):
        load_pairs(path, store)

    # kin pair across families rejected; nonkin within a family rejected
    path.write_text("id1,id2,relation,label\na,c,FD,kin\n")
    with pytest.raises(DataFormatError, match="famil"):
        load_pairs(path, store)
    path.write_text("id1,id2,relation,label\na,b,FD,nonkin\n")
    with pytest.raises(DataFormatError, match="famil"):
        load_pairs(path, store)


def test_pairs_roundtrip(tmp_path):
    store = small_store()
    pairs = PairSet(
        (
            KinPair("a", "b", KinshipRelation.FD, PairLabel.KIN),
            KinPair("a", "c", KinshipRelation.FD, PairLabel.NONKIN),
        )
    )
    path = tmp_path / "pairs.csv"
    save_pairs(pairs, path)
    loaded = load_pairs(path, store)
    assert loaded.pairs == pairs.pairs


def test_tri_roundtrip_and_validation(tmp_path):
    store = small_store()
    tris = TriSet(
        (
            TriSample("a", "b", "b2", Gender.MALE, PairLabel.KIN),
        )
    )
    # need a child in f1: build a custom store
    rows = [
        (PersonRef("a", "f1", Gender.MALE), np.ones(2)),
        (PersonRef("b", "f1", Gender.FEMALE), np.ones(2)),
        (PersonRef("b2", "f1", Gender.MALE), np.ones(2)),
        (PersonRef("x", "f2", Gender.MALE), np.ones(2)),
    ]
    store = EmbeddingStore(2, rows)
    path = tmp_path / "tri.csv"
    save_tri(tris, path)
    loaded = load_tri(path, store)
    assert loaded.samples[0].child_id == "b2"
    assert loaded.samples[0].child_gender is Gender.MALE

    # mother must be female
    path.write_text("father_id,mother_id,child_id,label\na,x,b2,kin\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_tri(path, store)


def test_augment_symmetric_counts_and_order():
    pairs = PairSet(
        (
            KinPair("a", "d", KinshipRelation.BB, PairLabel.KIN),
            KinPair("a", "b", KinshipRelation.FD, PairLabel.KIN),
            KinPair("b", "d", KinshipRelation.SIBS, PairLabel.KIN),
        )
    )
    out = augment_symmetric(pairs)
    assert len(out) == 5
    assert out.pairs[:3] == pairs.pairs
    assert out.pairs[3] == KinPair("d", "a", KinshipRelation.BB, PairLabel.KIN)
    assert out.pairs[4] == KinPair("d", "b", KinshipRelation.SIBS, PairLabel.KIN)
    # re-application doubles the symmetric pairs again: 2 sym originals +
    # 2 reversed are all symmetric, FD passes through
    again = augment_symmetric(out)
    assert len(again) == 9


def test_resample_nonkin_contract(tiny_world):
    world = tiny_world
    kin = world.kin_pairs["train"]
    out = resample_nonkin(kin, world.store, base_seed=3, epoch=1)
    assert len(out) == len(kin)
    for src, swapped in zip(kin, out):
        assert swapped.label is PairLabel.NONKIN
        assert swapped.id1 == src.id1
        assert swapped.relation is src.relation
        g1 = world.store.person(swapped.id1).gender
        g2 = world.store.person(swapped.id2).gender
        from kinverify.relations import role2_gender

        assert g2 is role2_gender(swapped.relation, g1)
        assert world.store.family_of(swapped.id1) != world.store.family_of(swapped.id2)


def test_resample_nonkin_determinism_and_epoch_variation(tiny_world):
    world = tiny_world
    kin = world.kin_pairs["train"]
    a = resample_nonkin(kin, world.store, 5, 2)
    b = resample_nonkin(kin, world.store, 5, 2)
    assert a.pairs == b.pairs
    c = resample_nonkin(kin, world.store, 5, 3)
    assert a.pairs != c.pairs


def test_resample_nonkin_no_candidates():
    rows = [
        (PersonRef("a", "f1", Gender.MALE), np.ones(2)),
        (PersonRef("b", "f1", Gender.FEMALE), np.ones(2)),
    ]
    store = EmbeddingStore(2, rows)
    kin = PairSet((KinPair("a", "b", KinshipRelation.FD, PairLabel.KIN),))
    with pytest.raises(ValueError, match="FD"):
        resample_nonkin(kin, store, 0, 1)


def test_store_rejects_duplicates_and_bad_shapes():
    with pytest.raises(ValueError, match="duplicate"):
        EmbeddingStore(
            2,
            [
                (PersonRef("a", "f1", Gender.MALE), np.ones(2)),
                (PersonRef("a", "f2", Gender.MALE), np.ones(2)),
            ],
        )
    with pytest.raises(ValueError, match="shape"):
        EmbeddingStore(2, [(PersonRef("a", "f1", Gender.MALE), np.ones(3))])
