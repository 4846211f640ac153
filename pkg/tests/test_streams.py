import numpy as np
import pytest

from dpfedsim.streams import stream


def test_same_path_same_draws():
    a = stream(7, "client", 3, 12, 0).standard_normal(16)
    b = stream(7, "client", 3, 12, 0).standard_normal(16)
    np.testing.assert_array_equal(a, b)


def test_distinct_paths_differ():
    a = stream(7, "client", 3, 12, 0).standard_normal(16)
    b = stream(7, "client", 3, 12, 1).standard_normal(16)
    c = stream(8, "client", 3, 12, 0).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_order_independence():
    # Draws on one stream are unaffected by how many other streams were used.
    first = stream(1, "a").standard_normal(4)
    for k in range(10):
        stream(1, "b", k).standard_normal(100)
    again = stream(1, "a").standard_normal(4)
    np.testing.assert_array_equal(first, again)


def test_string_and_int_labels_distinct():
    assert not np.array_equal(stream(0, "1").standard_normal(4),
                              stream(0, 1, "").standard_normal(4))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        stream(-1, "x")
