import numpy as np
import pytest

from clustersmc.data import (
    TABLE1_SLIDES,
    DataConfig,
    default_data_config,
    export_csv,
    generate_clients,
    import_csv,
    round_half_up,
)
from clustersmc.errors import ConfigError


def rows(c, split):
    X = getattr(c, f"X_{split}")
    y = getattr(c, f"y_{split}")
    return {tuple(x) + (int(l),) for x, l in zip(X, y)}


def test_zero_fraction_gives_all_negative():
    (c,) = generate_clients(DataConfig(K=1, sizes=(50,), label_fracs=(0.0,), input_dim=3))
    assert c.y_train.sum() == 0 and c.y_test.sum() == 0


def test_hundred_examples_split_80_20():
    (c,) = generate_clients(DataConfig(K=1, sizes=(100,), label_fracs=(0.55,), input_dim=3))
    assert (c.n_train, c.n_test) == (80, 20)


def test_deterministic():
    cfg = default_data_config()
    a, b = generate_clients(cfg), generate_clients(cfg)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X_train, y.X_train)
        np.testing.assert_array_equal(x.y_test, y.y_test)


@pytest.mark.parametrize("seed", range(5))
def test_class_counts_split_and_disjointness(seed):
    rng = np.random.default_rng(seed)
    K = 5
    sizes = tuple(int(s) for s in rng.integers(10, 120, K))
    fracs = tuple(float(f) for f in rng.uniform(0, 1, K))
    clients = generate_clients(DataConfig(K=K, sizes=sizes, label_fracs=fracs, input_dim=4, seed=seed))
    for c, n, f in zip(clients, sizes, fracs):
        assert c.n_train + c.n_test == n
        assert abs(c.n_train - 0.8 * n) <= 1
        assert c.y_train.sum() + c.y_test.sum() == round_half_up(n * f)
        if 0 < f < 1 and 0 < round_half_up(n * f) < n:
            assert set(np.unique(c.y_train)) == {0, 1}
        assert not rows(c, "train") & rows(c, "test")


def test_default_profile_follows_table1():
    cfg = default_data_config()
    assert cfg.sizes == TABLE1_SLIDES == (267, 211, 207, 199, 223, 110)


@pytest.mark.parametrize(
    "kwargs, field",
    [
        (dict(K=2, sizes=(20,), label_fracs=(0.5, 0.5)), "data.sizes"),
        (dict(K=1, sizes=(9,), label_fracs=(0.5,)), "data.sizes"),
        (dict(K=1, sizes=(20,), label_fracs=(1.5,)), "data.label_fracs"),
    ],
)
def test_invalid_config(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        generate_clients(DataConfig(**kwargs))
    assert exc.value.field == field


def test_csv_roundtrip(tmp_path):
    clients = generate_clients(DataConfig(K=2, sizes=(12, 15), label_fracs=(0.5, 0.3), input_dim=3))
    path = tmp_path / "data.csv"
    export_csv(clients, path)
    assert path.read_text().splitlines()[0] == "client_id,split,label,x0,x1,x2"
    back = import_csv(path)
    for a, b in zip(clients, back):
        assert a.client_id == b.client_id
        np.testing.assert_array_equal(a.X_train, b.X_train)
        np.testing.assert_array_equal(a.y_test, b.y_test)
