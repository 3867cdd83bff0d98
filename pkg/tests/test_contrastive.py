import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pclr.contrastive import (
    EcgRef,
    PatientIndex,
    batch_loss,
    build_batch,
    cosine_similarity,
    ntxent_pair_loss,
)
from pclr.errors import ConfigError, DataError, DimensionError, NumericDegeneracyError

from oracles import batch_loss_brute, ntxent_brute

ORTHO_PAIR = math.log(1 + 2 * math.exp(-10))


# ---------------------------------------------------------------- cosine

def test_cosine_hand_cases():
    assert cosine_similarity([3.0, 4.0], [3.0, 4.0]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


def test_cosine_zero_vector():
    with pytest.raises(NumericDegeneracyError):
        cosine_similarity([0, 0], [1, 0])


# ---------------------------------------------------------------- pair and batch loss

def test_orthogonal_pairs_hand_case():
    z = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
    assert ntxent_pair_loss(0, 1, z) == pytest.approx(ORTHO_PAIR, abs=1e-9)
    # rows p and p + N are the positives in a batch
    assert batch_loss(z[[0, 2, 1, 3]]) == pytest.approx(2 * ORTHO_PAIR, abs=1e-9)


def test_identical_rows_give_log_three():
    z = np.ones((4, 5))
    assert ntxent_pair_loss(0, 2, z) == pytest.approx(math.log(3), abs=1e-9)
    assert batch_loss(z) == pytest.approx(2 * math.log(3), abs=1e-9)


def test_single_patient_batch_has_zero_loss(rng):
    z = rng.normal(size=(2, 8))
    assert ntxent_pair_loss(0, 1, z) == 0.0
    assert batch_loss(z) == 0.0


def test_matches_brute_force_on_random_batches():
    r = np.random.default_rng(2024)
    for _ in range(100):
        n = int(r.integers(1, 9))
        z = r.normal(size=(2 * n, int(r.integers(2, 12))))
        tau = float(r.choice([0.05, 0.1, 0.5, 1.0]))
        expected = batch_loss_brute(z, tau)
        assert batch_loss(z, tau) == pytest.approx(expected, rel=1e-6, abs=1e-12)
        i, j = (int(v) for v in r.choice(2 * n, 2, replace=False))
        assert ntxent_pair_loss(i, j, z, tau) == pytest.approx(ntxent_brute(z, i, j, tau), rel=1e-6, abs=1e-12)


def test_symmetric_adds_reverse_direction(rng):
    z = rng.normal(size=(6, 4))
    reverse = sum(ntxent_brute(z, p + 3, p, 0.1) for p in range(3))
    assert batch_loss(z, symmetric=True) == pytest.approx(batch_loss_brute(z, 0.1) + reverse, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 8), d=st.integers(2, 16), seed=st.integers(0, 2**31 - 1))
def test_loss_non_negative_and_scale_invariant(n, d, seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(2 * n, d))
    base = batch_loss(z)
    assert base >= 0
    scaled = z * r.uniform(0.01, 100.0, size=(2 * n, 1))
    assert batch_loss(scaled) == pytest.approx(base, rel=1e-5, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 2**31 - 1))
def test_patient_permutation_invariance(n, seed):
    r = np.random.default_rng(seed)
    z = r.normal(size=(2 * n, 6))
    perm = r.permutation(n)
    assert batch_loss(z[np.concatenate([perm, perm + n])]) == pytest.approx(batch_loss(z), rel=1e-9, abs=1e-12)


def test_extreme_similarities_stay_finite():
    # exp(1/tau) overflows float64 at tau 1e-3 unless the max logit is subtracted
    z = np.array([[1.0, 0], [-1, 0], [1, 0], [-1, 0]])
    for tau in (0.1, 1e-3):
        loss = batch_loss(z, tau)
        assert np.isfinite(loss) and loss >= 0
    assert ntxent_pair_loss(0, 1, z, 1e-3) == pytest.approx(2 / 1e-3, rel=1e-12)


def test_loss_errors(rng):
    with pytest.raises(ConfigError):
        batch_loss(rng.normal(size=(4, 3)), tau=0.0)
    with pytest.raises(DimensionError):
        batch_loss(rng.normal(size=(3, 3)))
    with pytest.raises(NumericDegeneracyError):
        batch_loss(np.zeros((2, 3)))
    with pytest.raises(ConfigError):
        ntxent_pair_loss(1, 1, rng.normal(size=(4, 3)))


# ---------------------------------------------------------------- batch assembly

def _index(spec):
    idx = PatientIndex()
    for pid, ecgs in spec.items():
        for e in ecgs:
            idx.add(pid, EcgRef(e))
    return idx


def test_batch_layout():
    idx = _index({"A": ["a1", "a2"], "B": ["b1"]})
    rows = build_batch(idx, ["A", "B"], np.random.default_rng(0))
    assert rows[0] in {"a1", "a2"} and rows[2] in {"a1", "a2"}
    assert rows[1] == rows[3] == "b1"


def test_batch_sequence_is_seeded():
    idx = _index({f"p{i}": [f"e{i}_{k}" for k in range(4)] for i in range(5)})

    def draw(seed):
        r = np.random.default_rng(seed)
        return [build_batch(idx, idx.ids(), r) for _ in range(5)]

    assert draw(3) == draw(3)
    assert draw(3) != draw(4)


def test_draws_are_uniform_over_a_patients_ecgs():
    idx = _index({"A": ["a0", "a1", "a2", "a3"]})
    r = np.random.default_rng(9)
    counts = Counter()
    for _ in range(4000):
        counts.update(build_batch(idx, ["A"], r))
    observed = [counts[f"a{k}"] for k in range(4)]
    assert stats.chisquare(observed).pvalue > 0.001


def test_unknown_patient():
    with pytest.raises(DataError):
        build_batch(_index({"A": ["a"]}), ["Z"], np.random.default_rng(0))


def test_index_filters():
    idx = _index({"A": ["a1", "a2"], "B": ["b1"]})
    assert idx.with_min_ecgs(2).ids() == ["A"]
    assert idx.subset(["B"]).ids() == ["B"]
    assert len(idx) == 2
