import dataclasses

import numpy as np
import pytest

from scenelay.encoders import PrecomputedStore
from scenelay.model import (
    EncoderKind,
    InputMode,
    ModelConfig,
    build_model,
    encode_instances,
    forward,
    load_checkpoint,
    predict,
    save_checkpoint,
    train_step,
)
from scenelay.nncore import RMSprop
from scenelay.synthetic import make_instances
from scenelay.training import gradient_check

SMALL = dict(embed_dim=8, cap_dim=6, zc_dim=5, zh_dim=4, lstm_hidden=3)


@pytest.fixture(scope="module")
def data():
    return make_instances(12, seed=3, dim=8)


def _model(data, seed=0, **kw):
    instances, table = data
    cfg = ModelConfig(**{**SMALL, **kw})
    return build_model(cfg, table, seed, instances)


# triplet mode has no caption encoder, so only one encoder applies to it
COMBOS = [(m, e) for m in InputMode for e in EncoderKind if m is not InputMode.TRIPLET or e is EncoderKind.AVG]


@pytest.mark.parametrize("mode,encoder", COMBOS)
def test_gradients_match_finite_differences(mode, encoder):
    rep = gradient_check(encoder, mode, seed=1)
    assert rep.max_rel_err < 1e-4, (rep.worst_param, rep.worst_index)


def test_gradients_trainable_embeddings():
    rep = gradient_check(EncoderKind.BILSTM, InputMode.CAPTION, seed=2, trainable_embeddings=True)
    assert "emb" in rep.per_param and rep.max_rel_err < 1e-4


def test_zero_network_outputs_bias(data):
    instances, _ = data
    for mode in InputMode:
        m = _model(data, mode=mode)
        for k in m.params:
            m.params[k][...] = 0.0
        m.params["out.b"][:] = [0.1, 0.2, 0.3, 0.4]
        out = m.predict_arrays(encode_instances(instances, m.cfg, m.table))
        np.testing.assert_array_equal(out, np.tile([0.1, 0.2, 0.3, 0.4], (len(instances), 1)))


def test_output_shape_and_purity(data):
    instances, _ = data
    m = _model(data, encoder="bilstm")
    enc = encode_instances(instances, m.cfg, m.table)
    a, b = m.predict_arrays(enc), m.predict_arrays(enc)
    assert a.shape == (len(instances), 4)
    assert np.array_equal(a, b)


def test_caption_no_so_ignores_subject_object_indices(data):
    instances, _ = data
    m = _model(data, mode="caption-so")
    x = instances[0]
    swapped = dataclasses.replace(x, subj_idx=x.obj_idx, obj_idx=x.subj_idx)
    assert forward(x, m) == forward(swapped, m)
    # same caption, different subject box: only the box path can change the output
    moved = dataclasses.replace(x, subject_box=x.subject_box._replace(cy=x.subject_box.cy + 0.1))
    assert forward(x, m) != forward(moved, m)


def test_triplet_reads_only_relation_token(data):
    instances, _ = data
    m = _model(data, mode="triplet")
    x = instances[1]
    toks = list(x.tokens)
    for j in range(len(toks)):
        if j not in (x.subj_idx, x.rel_idx, x.obj_idx):
            toks[j] = "the" if toks[j] != "the" else "a"
    toks.append("park")
    changed = dataclasses.replace(x, tokens=tuple(toks))
    assert forward(x, m) == forward(changed, m)
    other_rel = dataclasses.replace(x, tokens=tuple(
        ("holding" if t != "holding" else "riding") if j == x.rel_idx else t for j, t in enumerate(x.tokens)
    ))
    assert forward(x, m) != forward(other_rel, m)


def test_triplet_mode_has_no_caption_params():
    shapes = ModelConfig(mode="triplet", **SMALL).param_shapes()
    assert "cap.W" not in shapes and shapes["c.W"] == (5, 24)


def test_fusion_widths():
    widths = {m: ModelConfig(mode=m, **SMALL).fusion_dim for m in InputMode}
    assert widths == {
        InputMode.CAPTION: 6 + 16, InputMode.TRIPLET: 24,
        InputMode.CAPTION_PLUS_RELATION: 6 + 24, InputMode.CAPTION_NO_SO: 6,
    }


def test_oov_subject_skipped(data):
    instances, _ = data
    m = _model(data)
    x = instances[0]
    toks = list(x.tokens)
    toks[x.subj_idx] = "zzzunknown"
    bad = dataclasses.replace(x, tokens=tuple(toks))
    enc = encode_instances([bad, x], m.cfg, m.table)
    assert list(enc.index) == [1] and enc.skipped[0][0] == 0
    with pytest.raises(ValueError):
        forward(bad, m)
    # caption-so never reads the subject token
    assert len(encode_instances([bad], ModelConfig(mode="caption-so", **SMALL), m.table)) == 1


def test_overfit_single_instance(data):
    instances, table = data
    # default layer widths and optimizer settings
    m = build_model(ModelConfig(embed_dim=8), table, 4)
    batch = encode_instances(instances[:1], m.cfg, m.table)
    opt = RMSprop()
    for _ in range(2000):
        loss = train_step(m, batch, opt)
    assert loss < 1e-4


def test_zero_learning_rate_leaves_params(data):
    instances, _ = data
    m = _model(data, encoder="bilstm")
    before = {k: v.copy() for k, v in m.params.items()}
    batch = encode_instances(instances, m.cfg, m.table)
    opt = RMSprop(lr=0.0)
    losses = [train_step(m, batch, opt) for _ in range(3)]
    assert losses[0] == losses[1] == losses[2]
    for k in before:
        np.testing.assert_array_equal(m.params[k], before[k])


def test_duplicate_batch_same_update(data):
    instances, _ = data
    a, b = _model(data), _model(data)
    one = encode_instances(instances[:1], a.cfg, a.table)
    two = encode_instances(instances[:1] * 2, b.cfg, b.table)
    train_step(a, one, RMSprop(lr=1e-3))
    train_step(b, two, RMSprop(lr=1e-3))
    for k in a.params:
        np.testing.assert_allclose(a.params[k], b.params[k], rtol=1e-12, atol=1e-15)


def test_empty_batch_rejected(data):
    m = _model(data)
    with pytest.raises(ValueError):
        train_step(m, encode_instances([], m.cfg, m.table), RMSprop())


def test_predict_records(data):
    instances, _ = data
    m = _model(data)
    recs = predict(instances, m)
    assert recs == predict(instances, m)
    assert predict([], m) == []
    assert [r["instance_index"] for r in recs] == list(range(len(instances)))
    assert set(recs[0]) >= {"image_id", "instance_index", "pred_box", "gold_box"}
    assert recs[3]["gold_box"] == list(instances[3].object_box)


def test_precomputed_store_untouched(data):
    instances, table = data
    rng = np.random.default_rng(0)
    store = PrecomputedStore.from_dict({x.caption_id: rng.normal(size=10) for x in instances})
    snapshot = {k: v.tobytes() for k, v in store.vectors.items()}
    m = build_model(ModelConfig(encoder="precomputed", store_dim=10, **SMALL), table, 0)
    batch = encode_instances(instances, m.cfg, table, store)
    opt = RMSprop(lr=1e-2)
    for _ in range(5):
        train_step(m, batch, opt)
    assert {k: v.tobytes() for k, v in store.vectors.items()} == snapshot
    missing = dataclasses.replace(instances[0], image_id="nowhere")
    with pytest.raises(KeyError, match="nowhere#0"):
        encode_instances([missing], m.cfg, table, store)


@pytest.mark.parametrize("kw", [dict(), dict(encoder="bilstm"), dict(encoder="bilstm", trainable_embeddings=True),
                                dict(mode="triplet"), dict(mode="caption+relation")])
def test_checkpoint_round_trip(data, tmp_path, kw):
    instances, table = data
    m = _model(data, seed=5, **kw)
    if "emb" in m.params:
        # make the embedding rows distinguishable from the table
        m.params["emb"] += np.arange(m.params["emb"].shape[0])[:, None] * 1e-3
    path = tmp_path / "ck.json"
    save_checkpoint(m, path, seed=5, note="x")
    m2, doc = load_checkpoint(path, table)
    assert doc["seed"] == 5 and m2.cfg == m.cfg
    assert list(m2.params) == list(m.params)
    for k in m.params:
        np.testing.assert_array_equal(m2.params[k], m.params[k])
    enc = encode_instances(instances, m.cfg, table)
    np.testing.assert_array_equal(m.predict_arrays(enc), m2.predict_arrays(enc))


def test_checkpoint_shape_mismatch(data, tmp_path):
    import json

    m = _model(data)
    path = tmp_path / "ck.json"
    save_checkpoint(m, path)
    doc = json.loads(path.read_text())
    doc["config"]["zh_dim"] = 7
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError):
        load_checkpoint(path, m.table)


def test_embed_dim_must_match_table(data):
    _, table = data
    with pytest.raises(ValueError):
        build_model(ModelConfig(embed_dim=9), table)
