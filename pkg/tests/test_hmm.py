import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hugesture.hmm import (ClassifierBank, HmmModel, baum_welch, classify, forward_loglik, init_model,
                           log_likelihoods, no_finger_weighted_priors, penalized_objective, posterior,
                           sample, train_bank, uniform_priors)
from hugesture.symbolizer import SymbolSequence

CLASSES = ("no-finger", "finger-press", "button-on", "button-off", "motion-up", "motion-down", "screw")


def random_model(rng, K, V, concentration=1.0):
    return HmmModel(rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K), size=K),
                    rng.dirichlet(np.full(V, concentration), size=K))


def brute_force(m, S):
    total = 0.0
    for z in itertools.product(range(m.K), repeat=len(S)):
        p = m.pi[z[0]] * m.phi[z[0], S[0]]
        for t in range(1, len(S)):
            p *= m.A[z[t - 1], z[t]] * m.phi[z[t], S[t]]
        total += p
    return np.log(total)


def naive_forward(m, S):
    a = m.pi * m.phi[:, S[0]]
    for s in S[1:]:
        a = (a @ m.A) * m.phi[:, s]
    return np.log(a.sum())


def test_single_state_chain(rng):
    m = random_model(rng, 1, 5)
    S = rng.integers(0, 5, size=30)
    assert forward_loglik(m, S) == pytest.approx(np.log(m.phi[0, S]).sum(), abs=1e-12)


def test_exhaustive_path_oracle(rng):
    m = random_model(rng, 3, 4)
    S = rng.integers(0, 4, size=5)
    assert forward_loglik(m, S) == pytest.approx(brute_force(m, S), abs=1e-9)


def test_probabilities_sum_to_one(rng):
    m = random_model(rng, 3, 4)
    for L in (1, 3, 6):
        total = sum(np.exp(forward_loglik(m, S)) for S in itertools.product(range(4), repeat=L))
        assert total == pytest.approx(1.0, abs=1e-9)


def test_scaled_matches_naive(rng):
    m = random_model(rng, 4, 6)
    S = rng.integers(0, 6, size=80)
    assert forward_loglik(m, S) == pytest.approx(naive_forward(m, S), abs=1e-9)


def test_long_sequence_no_underflow(rng):
    m = random_model(rng, 4, 6)
    ll = forward_loglik(m, rng.integers(0, 6, size=20000))
    assert np.isfinite(ll) and ll < -1000


def test_forward_errors(rng):
    m = random_model(rng, 2, 3)
    with pytest.raises(ValueError):
        forward_loglik(m, [])
    with pytest.raises(ValueError):
        forward_loglik(m, [0, 3])


def test_init_model():
    m = init_model(1, 4, 0)
    assert m.pi.tolist() == [1.0] and m.A.tolist() == [[1.0]]
    a, b = init_model(6, 30, 5), init_model(6, 30, 5)
    assert np.array_equal(a.phi, b.phi) and np.array_equal(a.A, b.A)
    for M in (a.A, a.phi):
        np.testing.assert_allclose(M.sum(axis=1), 1, atol=1e-12)
    assert np.abs(a.phi * 30 - 1).max() <= 0.01
    assert a.A[0, 0] == pytest.approx(3 * a.A[0, 2]) and a.A[0, 1] == pytest.approx(a.A[0, 0])
    with pytest.raises(ValueError):
        init_model(0, 3)


def test_single_state_closed_form():
    S = np.array([0, 1, 1, 2, 1, 0, 1])
    m, _ = baum_welch([S], 1, iterations=3, smoothing=0.5, alphabet_size=4)
    counts = np.bincount(S, minlength=4) + 0.5
    np.testing.assert_allclose(m.phi[0], counts / counts.sum(), atol=1e-12)


def test_trace_non_decreasing(rng):
    for trial in range(20):
        K, V = int(rng.integers(1, 6)), int(rng.integers(2, 9))
        seqs = [rng.integers(0, V, size=int(rng.integers(1, 40))) for _ in range(int(rng.integers(1, 6)))]
        m, trace = baum_welch(seqs, K, 15, 1e-3, rng_seed=trial, alphabet_size=V + 2)
        assert len(trace) == 16
        assert np.all(np.diff(trace) >= -1e-8)


def test_penalized_objective_non_decreasing(rng):
    seqs = [rng.integers(0, 5, size=30) for _ in range(4)]
    prev = -np.inf
    model = init_model(3, 7, 0)
    for _ in range(10):
        obj = penalized_objective(model, seqs, 0.01)
        assert obj >= prev - 1e-8
        prev = obj
        model, _ = baum_welch(seqs, 3, 1, 0.01, alphabet_size=7, init=model)


def test_two_state_recovery():
    rng = np.random.default_rng(1)
    true = HmmModel(np.array([0.6, 0.4]), np.array([[0.9, 0.1], [0.2, 0.8]]),
                    np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]))
    S = sample(true, 10_000, rng)
    m, _ = baum_welch([S], 2, 200, 1e-3, alphabet_size=3)
    best = min(max(np.abs(m.A[np.ix_(p, p)] - true.A).max(), np.abs(m.phi[list(p)] - true.phi).max())
               for p in itertools.permutations(range(2)))
    assert best <= 0.05


def test_smoothing_keeps_probabilities_positive():
    m, _ = baum_welch([[0, 0, 0, 0]], 3, 10, 1e-3, alphabet_size=50)
    assert m.phi.min() > 0 and m.A.min() > 0 and m.pi.min() > 0


def test_bad_corpus():
    with pytest.raises(ValueError):
        baum_welch([], 2)
    with pytest.raises(ValueError):
        baum_welch([[0, 1]], 0)


def bank_of(models, priors=None, h="abc"):
    return ClassifierBank(models, uniform_priors(len(models)) if priors is None else priors,
                          CLASSES[:len(models)], h)


def test_identical_models_uniform_posterior(rng):
    m = random_model(rng, 3, 5)
    post, k = classify(bank_of([m] * 7), rng.integers(0, 5, size=20))
    np.testing.assert_allclose(post, 1 / 7, atol=1e-12)
    assert k == 0


def test_prior_orders_equal_likelihoods(rng):
    m = random_model(rng, 3, 5)
    pr = np.array([1, 1, 2, 1, 1, 1, 1], float)
    post, k = classify(bank_of([m] * 7, pr / pr.sum()), rng.integers(0, 5, size=20))
    assert k == 2
    assert post[2] > post[0] == pytest.approx(post[1])


def test_self_classification():
    # peaked emissions, as trained gesture models have; flat Dirichlet(1)
    # models overlap enough that their Bayes error alone is ~4% at length 40
    rng = np.random.default_rng(11)
    models = [random_model(rng, 3, 8, concentration=0.5) for _ in range(7)]
    bank = bank_of(models)
    hits = 0
    for trial in range(200):
        n = trial % 7
        hits += classify(bank, sample(models[n], 40, rng))[1] == n
    assert hits / 200 >= 0.95


def test_posterior_properties(rng):
    ll = rng.normal(-50, 10, size=7)
    pr = no_finger_weighted_priors(CLASSES)
    assert pr[0] == 0.5 and pr.sum() == pytest.approx(1)
    p = posterior(ll, pr)
    assert p.sum() == pytest.approx(1, abs=1e-12)
    assert np.argmax(posterior(ll + 1234.5, pr)) == np.argmax(p)


def test_hash_mismatch(rng):
    bank = bank_of([random_model(rng, 2, 3)] * 7, h="one")
    with pytest.raises(ValueError, match="hash mismatch"):
        classify(bank, SymbolSequence(np.array([0, 1]), dictionary_hash="two"))


def test_bank_round_trip_bit_exact(rng):
    seqs = {c: [rng.integers(0, 9, size=25) for _ in range(3)] for c in CLASSES}
    bank = train_bank(seqs, CLASSES, K=4, iterations=3, alphabet_size=9, dictionary_hash="ff" * 32,
                      meta={"held_out_subject": 3})
    blob = bank.to_bytes()
    back = ClassifierBank.from_bytes(blob)
    assert back.to_bytes() == blob
    assert back.classes == CLASSES and back.iterations == 3 and back.meta == {"held_out_subject": "3"}
    for a, b in zip(bank.models, back.models):
        assert a.pi.tobytes() == b.pi.tobytes()
        assert a.A.tobytes() == b.A.tobytes()
        assert a.phi.tobytes() == b.phi.tobytes()
    assert blob.startswith(b"HUGB 1\n")
    assert b"iterations 3\n" in blob


def test_bank_deterministic(rng):
    seqs = {c: [rng.integers(0, 9, size=25) for _ in range(3)] for c in CLASSES}
    a = train_bank(seqs, CLASSES, K=3, alphabet_size=9, rng_seed=4).to_bytes()
    assert a == train_bank(seqs, CLASSES, K=3, alphabet_size=9, rng_seed=4).to_bytes()


def test_bank_rejects_bad_priors(rng):
    m = random_model(rng, 2, 3)
    with pytest.raises(ValueError):
        bank_of([m] * 7, priors=np.full(7, 0.2))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 6), st.integers(0, 10_000))
def test_forward_oracle_property(K, V, L, seed):
    r = np.random.default_rng(seed)
    m = random_model(r, K, V)
    S = r.integers(0, V, size=L)
    assert forward_loglik(m, S) == pytest.approx(brute_force(m, S), abs=1e-9)
    ll = log_likelihoods(bank_of([m, m]), S)
    assert ll[0] == ll[1]
