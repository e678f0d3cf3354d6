import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from duetrec import numkit as nk
from duetrec.duet import (
    DuetModel,
    TrainConfig,
    ce_loss,
    fuse,
    load_model,
    save_model,
    train,
    write_train_log,
)
from duetrec.numkit import ParamStore, grad_check

SMALL_CFG = TrainConfig(epochs=20, dim_word=16, dim_entity=8, desc_len=16, batch_size=64, lr=3e-3, seed=2)


def fusion_store(w, b):
    s = ParamStore()
    s.add("fusion.weight", np.array(w, dtype=float).reshape(2, 1))
    s.add("fusion.bias", np.array([b], dtype=float))
    return s


@pytest.fixture(scope="module")
def trained(small_dataset, small_urg):
    return train(small_dataset, small_urg, SMALL_CFG)


def test_fuse_cases():
    p = np.array([0.1, 0.5, 0.93])
    assert np.allclose(fuse(p, p[::-1], fusion_store([0, 0], 0)).data, 0.5)
    assert fuse([0.5], [0.5], fusion_store([4, 4], -4)).data[0] == 0.5


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(-5, 5),
       st.lists(st.floats(0.001, 0.999), min_size=4, max_size=4))
def test_fuse_monotone(w1, w2, b, ps):
    s = fusion_store([w1, w2], b)
    a_l, b_l, a_g, b_g = ps
    lo_l, hi_l = sorted((a_l, b_l))
    lo_g, hi_g = sorted((a_g, b_g))
    lo, hi = fuse([lo_l], [lo_g], s).data[0], fuse([hi_l], [hi_g], s).data[0]
    assert hi >= lo
    assert 0 < lo < 1 and 0 < hi < 1


def test_ce_loss_values():
    assert ce_loss(np.array([1 - 1e-12]), [1]).item() < 1e-11
    assert ce_loss(np.array([0.5]), [0]).item() == pytest.approx(0.6931471805599453, abs=1e-15)
    assert ce_loss(np.array([0.5]), [1]).item() == pytest.approx(np.log(2), abs=1e-15)
    assert ce_loss(np.array([1e-12]), [1]).item() == pytest.approx(27.631021115928547, rel=1e-12)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(slope=1.0)
    cfg = TrainConfig()
    assert (cfg.dim_word, cfg.dim_entity, cfg.window) == (128, 50, 3)
    assert cfg.replace(epochs=3).epochs == 3


def test_zero_epochs_is_initialisation(small_dataset, small_urg):
    cfg = SMALL_CFG.replace(epochs=0)
    model, log = train(small_dataset, small_urg, cfg)
    fresh = DuetModel(small_dataset, small_urg, cfg)
    assert log == []
    for name, value in fresh.store.state_dict().items():
        assert np.array_equal(model.store[name], value)
    assert np.array_equal(model.store["fusion.weight"], [[1.0], [1.0]])
    assert model.store["fusion.bias"][0] == -1.0


def test_full_pipeline_grad_check(small_dataset, small_urg):
    cfg = SMALL_CFG.replace(dim_word=6, dim_entity=5, desc_len=8, history_len=4)
    model = DuetModel(small_dataset, small_urg, cfg)
    users, items, labels = small_dataset.indexed(small_dataset.train[:4])

    def loss(store):
        # eval-mode neighbourhoods are fixed, so the loss is a deterministic function
        return ce_loss(model.forward(users, items)[2], labels)

    assert grad_check(loss, model.store, max_coords=8) < 1e-4


def test_ablation_pins(small_dataset, small_urg):
    model = DuetModel(small_dataset, small_urg, SMALL_CFG)
    u, i, _ = small_dataset.indexed(small_dataset.test[:6])
    p_l, p_g, p_f = model.predict_batch(u, i)
    _, g_pin, f_pin = model.predict_batch(u, i, pin="global")
    assert np.all(g_pin == 0.5)
    w, b = model.store["fusion.weight"][:, 0], model.store["fusion.bias"][0]
    assert np.allclose(f_pin, 1 / (1 + np.exp(-(w[0] * p_l + w[1] * 0.5 + b))))
    l_pin, _, _ = model.predict_batch(u, i, pin="local")
    assert np.all(l_pin == 0.5)


def test_training_behaviour(trained, small_dataset):
    model, log = trained
    assert [row[0] for row in log] == list(range(1, SMALL_CFG.epochs + 1))
    ce = np.array([row[2] for row in log])
    assert np.all(np.isfinite(ce))
    assert ce[-5:].mean() < ce[:5].mean()
    assert ce[-1] < ce[0]
    u, i, y = small_dataset.indexed(small_dataset.test)
    p_f = model.score(u, i)
    assert p_f[y == 1].mean() > p_f[y == 0].mean()


def test_predict_contract(trained, small_dataset):
    model, _ = trained
    u, i, _ = small_dataset.test[0]
    first = model.predict(u, i)
    assert all(0 < p < 1 for p in first)
    assert model.predict(u, i) == first
    with pytest.raises(KeyError):
        model.predict("nobody", i)


def test_same_seed_same_weights(small_dataset, small_urg):
    cfg = SMALL_CFG.replace(epochs=2)
    a, log_a = train(small_dataset, small_urg, cfg)
    b, log_b = train(small_dataset, small_urg, cfg)
    assert log_a == log_b
    assert nk.dump_tensors(a.store.state_dict()) == nk.dump_tensors(b.store.state_dict())
    c, _ = train(small_dataset, small_urg, cfg.replace(seed=3))
    assert nk.dump_tensors(a.store.state_dict()) != nk.dump_tensors(c.store.state_dict())


def test_checkpoint_round_trip_predict(tmp_path, trained, small_dataset):
    model, log = trained
    path = str(tmp_path / "m.ckpt")
    save_model(model, path)
    back = load_model(path, small_dataset)
    u, i, _ = small_dataset.indexed(small_dataset.test)
    assert np.array_equal(back.predict_batch(u, i), model.predict_batch(u, i))
    assert back.cfg == model.cfg
    write_train_log(tmp_path / "log.csv", log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,kg_loss,ce_loss,train_auc" and len(lines) == len(log) + 1
    assert all(len(field.split(".")[1]) == 6 for field in lines[1].split(",")[1:])


def test_checkpoint_mismatch(tmp_path, trained, small_dataset):
    model, _ = trained
    path = str(tmp_path / "m.ckpt")
    save_model(model, path)
    tensors = nk.load_tensors(path)
    del tensors["fusion.bias"]
    nk.save_tensors(path, tensors)
    with pytest.raises(nk.CheckpointError):
        load_model(path, small_dataset)
