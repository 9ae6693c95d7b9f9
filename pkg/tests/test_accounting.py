# (C) 2026 pafi-hiwi contributors
# SPDX-License-Identifier: AGPL-3.0-or-later

import numpy as np
import pytest

from pafi.accounting import (
    ENUMERABLE,
    FORMULAS,
    ModelDims,
    count,
    count_all,
    enumerate_tuned,
    to_pretty,
    to_tsv,
)
from pafi.errors import ConfigurationError
from pafi.masks import pafi_mask

from utils import tiny_config, tiny_store

LARGE = ModelDims(V=50265, n=514, d=1024, L=24, r=8)


def _dims(**kw):
    """Percentages need the full_ft base, hence V and n."""
    return ModelDims(**{"V": 50, "n": 16, **kw})


def test_bitfit_hand_value():
    assert count("bitfit", _dims(d=4, L=2)).tuned == 92


def test_hiwi_bias_stores_only_merged_biases():
    rep = count("hiwi_bias", ModelDims(V=50, n=16, d=8, L=2, r=4))
    assert rep.stored == 80
    assert rep.tuned == (18 * 8 * 4 + 3 * 4 + 5 * 8) * 2
    assert count("hiwi_weight", _dims(d=8, L=2, r=4)).stored == rep.tuned


def test_hiwi_bias_storage_does_not_depend_on_r():
    stored = {count("hiwi_bias", _dims(d=16, L=3, r=r)).stored for r in (1, 4, 16, 64)}
    assert stored == {5 * 16 * 3}


def test_large_model_share_against_published_size():
    rep = count("hiwi_bias", LARGE, base_total=355_000_000)
    assert rep.stored == 122880
    assert rep.stored_pct == pytest.approx(0.0346, abs=5e-4)


def test_prefix_and_mam_hand_values():
    dims = ModelDims(V=50, n=16, d=8, L=2, r=2, l=4, m=4)
    prefix = count("prefix_tuning", dims)
    assert (prefix.tuned, prefix.stored) == (228, 128)
    mam = count("mam_adapter", dims)
    assert (mam.tuned, mam.stored) == (312, 212)


def test_full_ft_is_the_default_base():
    dims = ModelDims(V=50, n=16, d=8, L=2, r=2, l=4, m=4)
    reps = {r.method: r for r in count_all(dims)}
    assert list(reps) == list(FORMULAS)
    assert reps["full_ft"].tuned_pct == 100.0
    assert reps["lora"].tuned_pct == pytest.approx(100.0 * 4 * 8 * 2 * 2 / reps["full_ft"].tuned)


def test_missing_and_bad_dimensions():
    with pytest.raises(ConfigurationError, match="r"):
        count("lora", ModelDims(d=8, L=2))
    with pytest.raises(ConfigurationError, match="l, m"):
        count("prefix_tuning", ModelDims(V=50, n=16, d=8, L=2))
    with pytest.raises(ConfigurationError):
        ModelDims(d=0)
    with pytest.raises(ConfigurationError):
        count("ia3", ModelDims(d=8, L=2))


@pytest.mark.parametrize("seed", range(4))
def test_closed_forms_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    heads = int(rng.integers(1, 3))
    d = heads * int(rng.integers(1, 4))
    config = tiny_config(V=int(rng.integers(12, 30)), n=int(rng.integers(4, 9)),
                         d=d, L=int(rng.integers(1, 4)), heads=heads)
    r = int(rng.integers(1, 5))
    store = tiny_store(config, seed)
    dims = ModelDims(V=config.V, n=config.n, d=config.d, L=config.L, r=r)
    for method in ENUMERABLE:
        assert enumerate_tuned(store, method, r=r) == count(method, dims).tuned, method


def test_enumeration_of_a_sparse_mask(theta):
    mask = pafi_mask(theta, 0.1)
    expected = sum(mg.count for mg in mask if not mg.name.startswith("classifier."))
    assert enumerate_tuned(theta, "pafi", mask=mask) == expected
    assert enumerate_tuned(theta, "linear_ft") == 0
    with pytest.raises(ConfigurationError):
        enumerate_tuned(theta, "lora")


def test_tsv_and_pretty_tables():
    reps = count_all(_dims(d=4, L=2, r=2), ["bitfit", "lora"])
    tsv = to_tsv(reps).splitlines()
    assert tsv[0].split("\t") == ["method", "tuned", "stored", "tuned_pct", "stored_pct"]
    assert tsv[1].split("\t")[:3] == ["bitfit", "92", "92"]
    with pytest.raises(ConfigurationError):
        # full_ft base needs V and n
        to_tsv(count_all(ModelDims(d=4, L=2), ["bitfit"]))
    pretty = to_pretty(count_all(ModelDims(V=10, n=4, d=4, L=2, r=2), ["bitfit"])).splitlines()
    assert pretty[0].startswith("method")
    assert set(pretty[1].replace(" ", "")) == {"-"}
    assert pretty[2].startswith("bitfit")
