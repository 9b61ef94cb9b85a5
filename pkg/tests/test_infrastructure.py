import math

import numpy as np
import pytest

from brwlab.rng import BLOCK_SIZE, blocks, label_key, stream
from brwlab.serialize import canonical_json, csv_text
from brwlab.stats import (
    MCEstimate,
    chi2_gof_pvalue,
    ks_exponential,
    mean_estimate,
    median_with_stderr,
    proportion_estimate,
    variance_estimate,
)


def test_streams_reproducible_and_distinct():
    a = stream(1, "x", 3).random(5)
    assert np.array_equal(a, stream(1, "x", 3).random(5))
    assert not np.array_equal(a, stream(1, "x", 4).random(5))
    assert not np.array_equal(a, stream(2, "x", 3).random(5))
    assert not np.array_equal(a, stream(1, "y", 3).random(5))
    with pytest.raises(ValueError):
        stream(-1)


def test_label_key_is_stable():
    # Fixed value: keys must not depend on the interpreter's hash seed.
    assert label_key("profile") == label_key("profile")
    assert label_key("profile") != label_key("profiles")
    assert 0 <= label_key("abc") < 2**64


def test_blocks_cover_total():
    parts = blocks(2 * BLOCK_SIZE + 5)
    assert parts == [(0, BLOCK_SIZE), (1, BLOCK_SIZE), (2, 5)]
    assert blocks(0) == []


def test_canonical_json_format():
    text = canonical_json({"b": 0.1, "a": [1, 2.0, math.nan, True, None], "c": {"z": 1e-20, "y": "s"}})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text
    assert "2.0" in text and "null" in text and "true" in text
    assert "9.9999999999999995e-21" in text
    assert canonical_json({"k": 3}) == canonical_json({"k": 3})


def test_csv_shortest_round_trip():
    text = csv_text(("x", "y"), [(0.1, 3), (1 / 3, True)])
    assert text == "x,y\n0.1,3\n0.3333333333333333,1\n"


def test_estimates():
    est = proportion_estimate(30, 100)
    assert est.value == 0.3 and est.stderr == pytest.approx(math.sqrt(0.21 / 100))
    assert MCEstimate(1.0, 0.1, 5).within(1.25)
    assert not MCEstimate(1.0, 0.1, 5).within(1.35)
    assert mean_estimate([]).count == 0
    assert mean_estimate([2.0]).stderr == math.inf


def test_variance_estimate_standard_error(rng):
    # Fourth-moment standard error of the sample variance matches the spread across repeats.
    reps = [variance_estimate(rng.exponential(1.0, 2000)) for _ in range(300)]
    spread = np.std([r.value for r in reps], ddof=1)
    assert np.mean([r.stderr for r in reps]) == pytest.approx(spread, rel=0.15)


def test_median_bootstrap(rng):
    x = rng.normal(0, 1, 4000)
    med = median_with_stderr(x, rng)
    # Asymptotic se of the normal median: sqrt(pi/2) / sqrt(N).
    assert med.stderr == pytest.approx(math.sqrt(math.pi / 2 / 4000), rel=0.25)


def test_ks_and_chi2(rng):
    assert ks_exponential(rng.exponential(2.0, 20000), 2.0) < 0.02
    assert ks_exponential(rng.exponential(2.0, 20000), 1.0) > 0.2
    counts = rng.multinomial(10000, [0.2, 0.3, 0.5])
    assert chi2_gof_pvalue(counts, [0.2, 0.3, 0.5]) > 1e-3
    assert chi2_gof_pvalue([5000, 0, 5000], [0.2, 0.3, 0.5]) < 1e-10
