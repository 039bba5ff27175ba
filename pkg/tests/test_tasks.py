import gzip
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dpps.protocol import initial_states
from dpps.tasks.data import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
from dpps.tasks import (
    Dataset,
    DivergenceError,
    IdxFormatError,
    MlpSpec,
    MlpTask,
    evaluate_network,
    load_mnist_idx,
    make_shards,
    make_synthetic_dataset,
    softmax,
    write_idx,
)


def small_task(scheme="share_first_k", k=1, dims=(5, 4, 3)):
    return MlpTask.build(MlpSpec.three_layer(*dims), scheme, k=k)


def test_zero_weights_uniform_loss():
    task = small_task(dims=(6, 4, 10))
    s, l = np.zeros(task.partition.shared_dim), np.zeros(task.partition.local_dim)
    x = np.random.default_rng(0).normal(size=(20, 6))
    loss, _, _ = task.loss_and_grads(s, l, x, np.arange(20) % 10)
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_duplicated_example_same_gradient():
    task = small_task()
    rng = np.random.default_rng(1)
    s, l = task.init_params(rng)
    x, y = rng.normal(size=(1, 5)), np.array([2])
    one = task.loss_and_grads(s, l, x, y)
    dup = task.loss_and_grads(s, l, np.repeat(x, 4, axis=0), np.repeat(y, 4))
    assert dup[0] == pytest.approx(one[0], rel=1e-14)
    np.testing.assert_allclose(dup[1], one[1], rtol=1e-13)
    np.testing.assert_allclose(dup[2], one[2], rtol=1e-13)


def _fd_check(task, s, l, x, y, rng, per_block=10, h=1e-5):
    _, g_s, g_l = task.loss_and_grads(s, l, x, y)
    worst = 0.0
    for vec, grad, which in ((s, g_s, "s"), (l, g_l, "l")):
        if vec.size == 0:
            continue
        for k in rng.choice(vec.size, size=min(per_block, vec.size), replace=False):
            plus, minus = vec.copy(), vec.copy()
            plus[k] += h
            minus[k] -= h
            args_p = (plus, l) if which == "s" else (s, plus)
            args_m = (minus, l) if which == "s" else (s, minus)
            fd = (task.loss_and_grads(*args_p, x, y)[0] - task.loss_and_grads(*args_m, x, y)[0]) / (2 * h)
            worst = max(worst, abs(fd - grad[k]) / max(abs(fd), abs(grad[k]), 1e-8))
    return worst


@pytest.mark.parametrize("shared_layer", [0, 1, 2])
def test_gradients_match_finite_differences(shared_layer):
    tags = ["local"] * 3
    tags[shared_layer] = "shared"
    task = MlpTask.build(MlpSpec.three_layer(7, 5, 4), "custom", tags=tags)
    rng = np.random.default_rng(shared_layer)
    x, y = rng.normal(size=(16, 7)), rng.integers(0, 4, size=16)
    for _ in range(3):
        s, l = task.init_params(rng)
        assert _fd_check(task, 3 * s, 3 * l, x, y, rng) < 1e-4


def test_divergence_raises():
    task = small_task()
    s = np.full(task.partition.shared_dim, np.nan)
    l = np.zeros(task.partition.local_dim)
    with pytest.raises(DivergenceError):
        task.loss_and_grads(s, l, np.ones((2, 5)), np.array([0, 1]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 30))
def test_softmax_and_loss_properties(seed, spread):
    rng = np.random.default_rng(seed)
    z = spread * rng.normal(size=(8, 6))
    assert np.abs(softmax(z).sum(axis=1) - 1).max() < 1e-12
    task = small_task()
    s, l = task.init_params(rng)
    loss, _, _ = task.loss_and_grads(spread * s, l, rng.normal(size=(8, 5)), rng.integers(0, 3, size=8))
    assert loss >= 0


def test_synthetic_determinism_and_balance():
    a = make_synthetic_dataset(300, 10, 3, 4.0, seed=7)
    b = make_synthetic_dataset(300, 10, 3, 4.0, seed=7)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [100, 100, 100]


def test_synthetic_mean_separation():
    data = make_synthetic_dataset(60_000, 12, 4, 6.0, seed=2)
    means = np.stack([data.inputs[data.labels == c].mean(axis=0) for c in range(4)])
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    np.testing.assert_allclose(dists, 6.0, rtol=0.02)


def _train_linear_probe(data, epochs=5, lr=0.1, seed=0):
    """Plain SGD on multinomial logistic regression with bias, one example at a time."""
    rng = np.random.default_rng(seed)
    w = np.zeros((data.n_features, data.n_classes))
    b = np.zeros(data.n_classes)
    for _ in range(epochs):
        for i in rng.permutation(len(data)):
            x, y = data.inputs[i], data.labels[i]
            z = x @ w + b
            p = np.exp(z - z.max())
            p /= p.sum()
            p[y] -= 1
            w -= lr * np.outer(x, p)
            b -= lr * p
    return w, b


def test_separated_data_linear_probe():
    data = make_synthetic_dataset(2000, 20, 2, 10.0, seed=3)
    train, test = data.subset(np.arange(1500)), data.subset(np.arange(1500, 2000))
    w, b = _train_linear_probe(train)
    acc = ((test.inputs @ w + b).argmax(axis=1) == test.labels).mean()
    assert acc > 0.99


def test_zero_separation_is_chance():
    data = make_synthetic_dataset(4000, 20, 2, 0.0, seed=4)
    train, test = data.subset(np.arange(3000)), data.subset(np.arange(3000, 4000))
    w, b = _train_linear_probe(train, epochs=1, lr=0.01)
    acc = ((test.inputs @ w + b).argmax(axis=1) == test.labels).mean()
    assert abs(acc - 0.5) < 0.06


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    imgs = rng.integers(0, 256, size=(7, 4, 3), dtype=np.uint8)
    imgs[0, 0, 0] = 255
    labs = rng.integers(0, 10, size=7, dtype=np.uint8)
    write_idx(tmp_path / "img", imgs, IDX_IMAGES_MAGIC)
    write_idx(tmp_path / "lab", labs, IDX_LABELS_MAGIC)
    data = load_mnist_idx(tmp_path / "img", tmp_path / "lab")
    assert data.inputs.shape == (7, 12)
    assert data.inputs[0, 0] == 1.0
    np.testing.assert_array_equal(data.inputs, imgs.reshape(7, 12) / 255.0)
    np.testing.assert_array_equal(data.labels, labs)
    # gzip is accepted transparently
    (tmp_path / "img.gz").write_bytes(gzip.compress((tmp_path / "img").read_bytes()))
    assert load_mnist_idx(tmp_path / "img.gz", tmp_path / "lab").inputs.tobytes() == data.inputs.tobytes()


def test_idx_errors(tmp_path):
    imgs = np.zeros((3, 2, 2), dtype=np.uint8)
    write_idx(tmp_path / "img", imgs, IDX_IMAGES_MAGIC)
    write_idx(tmp_path / "lab", np.zeros(3, dtype=np.uint8), IDX_LABELS_MAGIC)
    write_idx(tmp_path / "lab4", np.zeros(4, dtype=np.uint8), IDX_LABELS_MAGIC)
    write_idx(tmp_path / "bad", imgs, 0x1234)
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "short").write_bytes(raw[:-2])
    with pytest.raises(IdxFormatError, match="bad magic"):
        load_mnist_idx(tmp_path / "bad", tmp_path / "lab")
    with pytest.raises(IdxFormatError, match=f"expected {len(raw)} bytes, got {len(raw) - 2}"):
        load_mnist_idx(tmp_path / "short", tmp_path / "lab")
    with pytest.raises(IdxFormatError, match="3 images but 4 labels"):
        load_mnist_idx(tmp_path / "img", tmp_path / "lab4")


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1, 2]), 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 300), st.integers(1, 12), st.integers(1, 50))
def test_shards_disjoint_and_cover(n_examples, n_nodes, batch):
    if n_examples < n_nodes:
        with pytest.raises(ValueError):
            make_shards(n_examples, n_nodes, 0, batch)
        return
    shards = make_shards(n_examples, n_nodes, 0, batch)
    allidx = np.concatenate([s.indices for s in shards])
    assert sorted(allidx.tolist()) == list(range(n_examples))
    for sh in shards:
        assert (sh.indices % n_nodes == sh.node_id).all()


def test_epoch_permutation_determinism():
    a = make_shards(100, 3, seed=9, batch_size=7)
    b = make_shards(100, 3, seed=9, batch_size=7)
    np.testing.assert_array_equal(a[1].permutation(4), b[1].permutation(4))
    assert not np.array_equal(a[1].permutation(4), a[1].permutation(5))
    # one epoch of batches covers the shard exactly once
    sh = a[2]
    seen = np.concatenate([sh.batch(t) for t in range(sh.batches_per_epoch)])
    assert sorted(seen.tolist()) == sorted(sh.indices.tolist())
    np.testing.assert_array_equal(sh.batch(sh.batches_per_epoch), sh.permutation(1)[:7])


def test_evaluate_hand_built_separator():
    # 2 features, 2 classes, hidden width 2; identity-like weights make logits follow the inputs
    task = MlpTask.build(MlpSpec.three_layer(2, 2, 2), "share_all")
    eye = 5 * np.eye(2)
    s, l = task.partition.pack([eye, eye, eye])
    x = np.array([[1.0, 0.0], [2.0, 0.5], [0.0, 1.0], [0.3, 3.0]])
    test = Dataset(x, np.array([0, 0, 1, 1]), 2)
    per_node, acc = evaluate_network(initial_states([s], [l]), task, test)
    assert per_node == [1.0] and acc == 1.0


def test_evaluate_identical_nodes_agree():
    task = small_task("share_all")
    rng = np.random.default_rng(6)
    s, l = task.init_params(rng)
    data = make_synthetic_dataset(90, 5, 3, 3.0, 1)
    per_node, acc = evaluate_network(initial_states([s] * 4, [l] * 4), task, data)
    assert len(set(per_node)) == 1 and acc == per_node[0]


def test_evaluate_uses_network_mean():
    task = small_task()
    rng = np.random.default_rng(8)
    params = [task.init_params(rng) for _ in range(3)]
    states = initial_states([p[0] for p in params], [p[1] for p in params])
    data = make_synthetic_dataset(60, 5, 3, 3.0, 2)
    per_node, acc = evaluate_network(states, task, data)
    s_bar = np.mean([p[0] for p in params], axis=0)
    expected = [task.accuracy(s_bar, p[1], data.inputs, data.labels) for p in params]
    assert per_node == expected and acc == pytest.approx(np.mean(expected))
