import numpy as np
import pytest

from cfkgr import kernels
from cfkgr.models import (MAGIC, ModelConfig, batch_view, init_model, load_checkpoint,
                          save_checkpoint)

N_ENT, N_REL = 7, 3


def model_for(kind, reciprocal=False, **kw):
    cfg = ModelConfig(kind=kind, entity_dim=4, relation_dim=3 if kind == "TuckER" else None,
                      reciprocal=reciprocal, **kw)
    return init_model(cfg, N_ENT, N_REL, seed=3)


def oracle_score(m, h, r, t):
    """Direct per-triple formulas, written without the kernels."""
    E, R = m.entity, m.relation
    kind = m.config.kind
    if kind == "TransE":
        return -np.sqrt(sum((E[h, i] + R[r, i] - E[t, i]) ** 2 for i in range(E.shape[1])))
    if kind == "ComplEx":
        d = E.shape[1] // 2
        eh = E[h, :d] + 1j * E[h, d:]
        et = E[t, :d] + 1j * E[t, d:]
        er = R[r, :d] + 1j * R[r, d:]
        return float(np.real(np.sum(eh * er * np.conj(et))))
    if kind == "RESCAL":
        d = E.shape[1]
        M = R[r].reshape(d, d)
        return sum(E[h, i] * M[i, j] * E[t, j] for i in range(d) for j in range(d))
    W = m.core
    return sum(W[i, j, k] * E[h, i] * R[r, j] * E[t, k]
               for i in range(W.shape[0]) for j in range(W.shape[1]) for k in range(W.shape[2]))


ALL = [(h, r, t) for h in range(N_ENT) for r in range(N_REL) for t in range(N_ENT)]


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "RESCAL", "TuckER"])
def test_scores_match_direct_formulas(kind):
    m = model_for(kind)
    got = m.score(np.array(ALL))
    want = [oracle_score(m, *t) for t in ALL]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_transe_score_by_hand():
    m = model_for("TransE")
    m.entity[:] = 0.0
    m.relation[:] = 0.0
    m.entity[0, :2] = [1.0, 2.0]
    m.relation[0, :2] = [0.5, 0.0]
    m.entity[1, :2] = [4.5, 6.0]
    assert m.score_one((0, 0, 1)) == pytest.approx(-5.0)


def test_complex_asymmetry():
    m = model_for("ComplEx")
    d = 4
    m.relation[0, :d] = 0.0
    m.relation[0, d:] = 1.0  # purely imaginary relation -> antisymmetric
    s = m.score(np.array([(1, 0, 2), (2, 0, 1)]))
    assert s[0] == pytest.approx(-s[1])


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "RESCAL", "TuckER"])
def test_reciprocal_rows_are_separate(kind):
    m = model_for(kind, reciprocal=True)
    assert m.relation.shape[0] == 2 * N_REL
    assert m.reciprocal_row(1) == 1 + N_REL


def test_out_of_range_ids():
    m = model_for("ComplEx")
    with pytest.raises(IndexError):
        m.score(np.array([(0, 0, N_ENT)]))
    with pytest.raises(IndexError):
        m.score(np.array([(0, N_REL, 1)]))


def test_init_distribution():
    cfg = ModelConfig(kind="ComplEx", entity_dim=50)
    m = init_model(cfg, 400, 20, seed=0)
    assert abs(m.entity.std() - 0.1) < 0.005
    assert abs(m.entity.mean()) < 0.005
    t = init_model(ModelConfig(kind="TransE", entity_dim=8), 30, 2, seed=0)
    np.testing.assert_allclose(np.linalg.norm(t.entity, axis=1), 1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(kind="DistMult", entity_dim=4)
    with pytest.raises(ValueError):
        ModelConfig(kind="ComplEx", entity_dim=4, dropout_entity=1.0)
    with pytest.raises(ValueError):
        ModelConfig(kind="ComplEx", entity_dim=0)


def test_dropout_is_train_only_and_shared_within_a_view(rng):
    m = model_for("ComplEx", dropout_entity=0.5)
    trip = np.array([(0, 1, 2), (0, 1, 2)])
    np.testing.assert_array_equal(m.score(trip), m.score(trip))
    view = batch_view(m, trip[:, 0], trip[:, 1], trip[:, 2], train=True, rng=rng)
    s = view.scores()
    assert s[0] == s[1]
    kept = view.ent_mask[view.ent_mask > 0]
    np.testing.assert_allclose(kept, 2.0)


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "RESCAL", "TuckER"])
def test_backends_agree(kind, rng):
    numpy_k = kernels.load_backend(use_numba=False)
    numba_k = kernels.load_backend(use_numba=True)
    if numba_k.NAME != "numba":
        pytest.skip("numba unavailable")
    m = model_for(kind, reciprocal=True)
    trip = np.array(ALL)
    w = rng.normal(size=len(trip))
    out = {}
    for k in (numpy_k, numba_k):
        old, kernels.backend = kernels.backend, k
        try:
            view = batch_view(m, trip[:, 0], trip[:, 1], trip[:, 2])
            g = view.grad(w)
            out[k.NAME] = (view.scores(), g.entity, g.relation, g.core)
        finally:
            kernels.backend = old
    for a, b in zip(out["numpy"], out["numba"]):
        if a is None:
            assert b is None
        else:
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("CFKGR_NUMBA", "0")
    assert kernels.load_backend().NAME == "numpy"


@pytest.mark.parametrize("kind", ["TransE", "ComplEx", "RESCAL", "TuckER"])
def test_checkpoint_round_trip(kind, tmp_path):
    m = model_for(kind, reciprocal=True, regularization="l3", reg_entity=0.1)
    m.meta = {"train": {"optimizer": "Adam"}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    again = load_checkpoint(path)
    assert again.digest() == m.digest()
    assert again.config == m.config
    assert again.meta == m.meta
    np.testing.assert_array_equal(again.score(np.array(ALL)), m.score(np.array(ALL)))


def test_checkpoint_rejects_damage(tmp_path):
    m = model_for("ComplEx")
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    (tmp_path / "bad_magic").write_bytes(b"X" + raw[1:])
    (tmp_path / "short").write_bytes(raw[:-8])
    (tmp_path / "long").write_bytes(raw + b"\0")
    for name in ("bad_magic", "short", "long"):
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / name)


def test_copy_is_independent():
    m = model_for("TuckER")
    c = m.copy()
    c.entity[0, 0] += 1.0
    c.core[0, 0, 0] += 1.0
    assert c.digest() != m.digest()
