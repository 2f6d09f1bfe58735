import math

import numpy as np
import pytest

from vblink.corpus import Corpus, Schema
from vblink.engine import (
    HyperParams,
    NumericalFailureError,
    VariationalState,
    elbo,
    elbo_grad_lambda,
    fit,
    init_state,
    load_state,
    save_state,
    update_lambda,
    update_phi,
)
from vblink.genmodel import GenConfig, sample_dataset


def tiny_corpus(column, cardinality=2):
    """Single-field corpus with the given value codes in one database."""
    schema = Schema(
        field_names=("f1",),
        field_values=(tuple(f"v{i + 1}" for i in range(cardinality)),),
    )
    values = np.asarray(column, dtype=np.int32).reshape(-1, 1)
    return Corpus(schema=schema, db_sizes=(len(column),), values=values)


def make_state(phi, lam):
    return VariationalState(
        phi=np.asarray(phi, dtype=np.float64),
        lam=[np.asarray(l, dtype=np.float64) for l in lam],
    )


@pytest.fixture
def pair_corpus():
    # two records carrying the same value of a binary field
    return tiny_corpus([0, 0])


class TestUpdateLambda:
    def test_prior_plus_counts(self, pair_corpus):
        hp = HyperParams.symmetric(1, 1.0, [2])
        state = make_state(np.ones((2, 1)), [np.ones((1, 2))])
        update_lambda(state, pair_corpus, hp)
        np.testing.assert_allclose(state.lam[0], [[3.0, 1.0]])

    def test_split_responsibilities(self):
        corpus = tiny_corpus([0, 1])
        hp = HyperParams.symmetric(2, 0.5, [2])
        state = make_state(np.full((2, 2), 0.5), [None])
        update_lambda(state, corpus, hp)
        np.testing.assert_allclose(state.lam[0], np.full((2, 2), 1.0))

    def test_no_records_leaves_prior(self):
        corpus = tiny_corpus([])
        hp = HyperParams(2, [np.array([0.3, 0.9])])
        state = make_state(np.zeros((0, 2)), [None])
        update_lambda(state, corpus, hp)
        np.testing.assert_array_equal(state.lam[0], [[0.3, 0.9], [0.3, 0.9]])

    def test_mass_conservation(self):
        corpus, _ = sample_dataset(
            GenConfig(
                entity_count=6,
                db_sizes=[40, 25],
                cardinalities=[3, 5, 2],
                distortion=0.1,
                seed=4,
            )
        )
        hp = HyperParams.symmetric(9, 0.25, corpus.schema.cardinalities)
        state = init_state(corpus, hp, seed=0)
        n = corpus.total_records
        for f, a in enumerate(hp.alpha):
            total = float(np.sum(state.lam[f] - a[None, :]))
            assert abs(total - n) <= 1e-9 * n


class TestUpdatePhi:
    def test_single_entity(self, pair_corpus):
        hp = HyperParams.symmetric(1, 1.0, [2])
        state = make_state(np.zeros((2, 1)), [np.array([[3.0, 1.0]])])
        update_phi(state, pair_corpus, hp)
        np.testing.assert_array_equal(state.phi, np.ones((2, 1)))

    def test_identical_entities_give_uniform(self):
        corpus = tiny_corpus([0, 1, 0])
        hp = HyperParams.symmetric(3, 1.0, [2])
        state = make_state(np.zeros((3, 3)), [np.full((3, 2), 1.7)])
        update_phi(state, corpus, hp)
        np.testing.assert_allclose(state.phi, np.full((3, 3), 1 / 3), atol=1e-15)

    def test_hand_computed_two_entities(self):
        corpus = tiny_corpus([0])
        hp = HyperParams.symmetric(2, 1.0, [2])
        state = make_state(np.zeros((1, 2)), [np.array([[2.0, 1.0], [1.0, 2.0]])])
        update_phi(state, corpus, hp)
        # scores are psi(2)-psi(3), psi(1)-psi(3) = -0.5, -1.5
        np.testing.assert_allclose(
            state.phi, [[0.7310585786300049, 0.2689414213699951]], atol=1e-12
        )

    def test_rows_on_simplex(self):
        corpus, _ = sample_dataset(
            GenConfig(
                entity_count=4,
                db_sizes=[30],
                cardinalities=[3, 3],
                distortion=0.2,
                seed=8,
            )
        )
        hp = HyperParams.symmetric(5, 0.4, corpus.schema.cardinalities)
        state = init_state(corpus, hp, seed=1)
        update_phi(state, corpus, hp)
        np.testing.assert_allclose(state.phi.sum(axis=1), 1.0, atol=1e-12)
        state.validate()

    def test_stationarity_against_row_perturbations(self):
        # after an update, no single-row change may improve the objective
        corpus = tiny_corpus([0, 1, 0, 0, 1])
        hp = HyperParams.symmetric(3, 0.6, [2])
        state = init_state(corpus, hp, seed=3)
        update_phi(state, corpus, hp)
        base = elbo(state, corpus, hp)
        rng = np.random.default_rng(0)
        for _ in range(30):
            other = state.copy()
            row = rng.integers(0, 5)
            other.phi[row] = rng.dirichlet(np.ones(3))
            assert elbo(other, corpus, hp) <= base + 1e-12


class TestElbo:
    def test_zero_when_no_data_and_prior_state(self):
        corpus = tiny_corpus([])
        hp = HyperParams(3, [np.array([0.7, 1.3])])
        state = make_state(np.zeros((0, 3)), [np.tile([0.7, 1.3], (3, 1))])
        assert elbo(state, corpus, hp) == pytest.approx(0.0, abs=1e-13)

    def test_single_entity_closed_form(self, pair_corpus):
        # evidence of two identical binary observations under a flat prior
        hp = HyperParams.symmetric(1, 1.0, [2])
        state = init_state(pair_corpus, hp, seed=0)
        assert elbo(state, pair_corpus, hp) == pytest.approx(
            math.log(1.0 / 3.0), abs=1e-12
        )

    def test_two_entity_bound(self, pair_corpus):
        hp = HyperParams.symmetric(2, 1.0, [2])
        _, report = fit(pair_corpus, hp, seed=5)
        assert report.elbo_trace[-1] <= math.log(7.0 / 24.0) + 1e-9


class TestGradient:
    def test_zero_after_update_lambda(self):
        corpus = tiny_corpus([0, 1, 1, 0, 1], cardinality=3)
        hp = HyperParams.symmetric(3, 0.7, [3])
        state = init_state(corpus, hp, seed=2)
        for k in range(3):
            for v in range(3):
                assert abs(elbo_grad_lambda(state, corpus, hp, k, 0, v)) <= 1e-8

    def test_zero_for_prior_state_without_data(self):
        corpus = tiny_corpus([])
        hp = HyperParams(2, [np.array([0.5, 2.0])])
        state = make_state(np.zeros((0, 2)), [np.tile([0.5, 2.0], (2, 1))])
        for k in range(2):
            for v in range(2):
                assert elbo_grad_lambda(state, corpus, hp, k, 0, v) == pytest.approx(
                    0.0, abs=1e-14
                )

    def test_matches_finite_differences(self):
        corpus = tiny_corpus([0, 1, 0])
        hp = HyperParams.symmetric(2, 0.8, [2])
        rng = np.random.default_rng(7)
        h = 1e-5
        for _ in range(20):
            state = make_state(
                rng.dirichlet(np.ones(2), size=3),
                [rng.uniform(0.5, 4.0, size=(2, 2))],
            )
            k = int(rng.integers(2))
            v = int(rng.integers(2))
            grad = elbo_grad_lambda(state, corpus, hp, k, 0, v)
            hi = state.copy()
            hi.lam[0][k, v] += h
            lo = state.copy()
            lo.lam[0][k, v] -= h
            fd = (elbo(hi, corpus, hp) - elbo(lo, corpus, hp)) / (2 * h)
            assert grad == pytest.approx(fd, rel=1e-5)


class TestFit:
    def test_single_entity_converges_fast(self, pair_corpus):
        hp = HyperParams.symmetric(1, 1.0, [2])
        _, report = fit(pair_corpus, hp, seed=0)
        assert report.converged
        assert report.sweeps_run <= 2
        assert report.elbo_trace[-1] == pytest.approx(math.log(1 / 3), abs=1e-12)

    def test_trace_nondecreasing(self):
        corpus, _ = sample_dataset(
            GenConfig(
                entity_count=8,
                db_sizes=[60],
                cardinalities=[4, 4, 4],
                distortion=0.1,
                seed=13,
            )
        )
        hp = HyperParams.symmetric(10, 0.3, corpus.schema.cardinalities)
        _, report = fit(corpus, hp, max_sweeps=40, rel_tol=1e-10, seed=1)
        trace = report.elbo_trace
        for prev, cur in zip(trace, trace[1:]):
            assert cur >= prev - 1e-9 * abs(prev)

    def test_label_permutation_symmetry(self):
        corpus, _ = sample_dataset(
            GenConfig(
                entity_count=5,
                db_sizes=[25],
                cardinalities=[3, 4],
                distortion=0.15,
                seed=21,
            )
        )
        hp = HyperParams.symmetric(4, 0.5, corpus.schema.cardinalities)
        start = init_state(corpus, hp, seed=9)
        perm = np.array([2, 0, 3, 1])
        state_a, report_a = fit(corpus, hp, initial_state=start.copy(), max_sweeps=25)
        state_b, report_b = fit(
            corpus, hp, initial_state=start.permute_entities(perm), max_sweeps=25
        )
        for ea, eb in zip(report_a.elbo_trace, report_b.elbo_trace):
            assert eb == pytest.approx(ea, rel=1e-12)
        np.testing.assert_allclose(
            state_b.phi, state_a.phi[:, perm], rtol=1e-9, atol=1e-12
        )
        for f in range(2):
            np.testing.assert_allclose(
                state_b.lam[f], state_a.lam[f][perm], rtol=1e-9, atol=1e-12
            )

    def test_numerical_failure_reports_sweep(self, pair_corpus):
        hp = HyperParams.symmetric(2, 1.0, [2])
        state = make_state(
            np.full((2, 2), 0.5), [np.array([[np.nan, 1.0], [1.0, 1.0]])]
        )
        with pytest.raises(NumericalFailureError) as err:
            fit(pair_corpus, hp, initial_state=state, max_sweeps=5)
        assert err.value.sweep == 1

    def test_option_validation(self, pair_corpus):
        hp = HyperParams.symmetric(1, 1.0, [2])
        with pytest.raises(ValueError):
            fit(pair_corpus, hp, max_sweeps=0)
        with pytest.raises(ValueError):
            fit(pair_corpus, hp, rel_tol=0.0)

    def test_on_sweep_sees_every_sweep(self, pair_corpus):
        hp = HyperParams.symmetric(2, 1.0, [2])
        seen = []
        _, report = fit(
            pair_corpus,
            hp,
            max_sweeps=7,
            seed=1,
            on_sweep=lambda s, e, _state: seen.append((s, e)),
        )
        assert [s for s, _ in seen] == list(range(1, report.sweeps_run + 1))
        assert [e for _, e in seen] == report.elbo_trace


class TestInitState:
    def test_deterministic(self, pair_corpus):
        hp = HyperParams.symmetric(3, 1.0, [2])
        a = init_state(pair_corpus, hp, seed=12)
        b = init_state(pair_corpus, hp, seed=12)
        np.testing.assert_array_equal(a.phi, b.phi)
        np.testing.assert_array_equal(a.lam[0], b.lam[0])

    def test_single_entity_degenerate(self, pair_corpus):
        hp = HyperParams.symmetric(1, 1.0, [2])
        state = init_state(pair_corpus, hp, seed=0)
        np.testing.assert_array_equal(state.phi, np.ones((2, 1)))

    def test_rows_positive_and_normalized(self):
        corpus = tiny_corpus([0, 1] * 5)
        hp = HyperParams.symmetric(3, 0.5, [2])
        state = init_state(corpus, hp, seed=4)
        assert state.phi.shape == (10, 3)
        assert np.min(state.phi) > 0.0
        np.testing.assert_allclose(state.phi.sum(axis=1), 1.0, atol=1e-12)
        state.validate()

    def test_more_entities_than_records(self):
        corpus = tiny_corpus([0, 1])
        hp = HyperParams.symmetric(5, 0.5, [2])
        state = init_state(corpus, hp, seed=0)
        assert state.phi.shape == (2, 5)
        state.validate()

    def test_alpha_shape_mismatch_rejected(self, pair_corpus):
        with pytest.raises(ValueError):
            init_state(pair_corpus, HyperParams(2, [np.ones(3)]), seed=0)
        with pytest.raises(ValueError):
            init_state(pair_corpus, HyperParams(2, [np.ones(2), np.ones(2)]), seed=0)


class TestHyperParams:
    def test_symmetric_constructor(self):
        hp = HyperParams.symmetric(4, 0.2, [2, 5])
        assert hp.entity_count == 4
        assert [a.shape for a in hp.alpha] == [(2,), (5,)]

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            HyperParams(0, [np.ones(2)])
        with pytest.raises(ValueError):
            HyperParams(2, [np.array([1.0, 0.0])])
        with pytest.raises(ValueError):
            HyperParams(2, [np.array([])])


class TestWorkers:
    def test_results_bitwise_identical_across_worker_counts(self):
        rng = np.random.default_rng(17)
        n = 20_000  # spans several record blocks
        corpus = tiny_corpus(rng.integers(0, 3, size=n), cardinality=3)
        hp = HyperParams.symmetric(4, 0.3, [3])
        results = []
        for workers in (1, 4):
            state = init_state(corpus, hp, seed=2)
            update_phi(state, corpus, hp, workers=workers)
            update_lambda(state, corpus, hp, workers=workers)
            value = elbo(state, corpus, hp, workers=workers)
            results.append((state, value))
        (s1, e1), (s4, e4) = results
        assert e1 == e4
        np.testing.assert_array_equal(s1.phi, s4.phi)
        np.testing.assert_array_equal(s1.lam[0], s4.lam[0])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        corpus, _ = sample_dataset(
            GenConfig(
                entity_count=4,
                db_sizes=[12, 9],
                cardinalities=[3, 2],
                distortion=0.1,
                seed=6,
            )
        )
        hp = HyperParams.symmetric(5, 0.4, corpus.schema.cardinalities)
        state, _ = fit(corpus, hp, max_sweeps=5, seed=3)
        path = tmp_path / "state.npz"
        save_state(path, state, corpus, hp)
        loaded, header = load_state(path)
        np.testing.assert_array_equal(loaded.phi, state.phi)
        for f in range(2):
            np.testing.assert_array_equal(loaded.lam[f], state.lam[f])
            np.testing.assert_array_equal(header["alpha"][f], hp.alpha[f])
        assert header["db_sizes"] == (12, 9)
        assert header["cardinalities"] == [3, 2]
        assert header["entity_count"] == 5

    def test_version_guard(self, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, version=np.asarray(99))
        with pytest.raises(ValueError):
            load_state(path)


class TestStateValidation:
    def test_rejects_broken_simplex(self):
        state = make_state([[0.6, 0.6]], [np.ones((2, 2))])
        with pytest.raises(ValueError):
            state.validate()

    def test_rejects_nonpositive_lambda(self):
        state = make_state([[0.5, 0.5]], [np.array([[1.0, 0.0], [1.0, 1.0]])])
        with pytest.raises(ValueError):
            state.validate()
