import numpy as np
import pytest

from paretorec.exceptions import IndexOutOfVocab, InvalidConfig, PrefixTooLong, TapeMismatch
from paretorec.model import ModelConfig, Tape, backward, forward_scores, init_params
from paretorec.sampling import PreferenceVector
from paretorec.training import SessionBatch, batch_objective

from conftest import make_dataset

MID = PreferenceVector(0.5, 0.5)


def objective(params, batch, pis, negatives, lam=0.5, g="softmax"):
    return batch_objective(params, batch, pis, negatives, lam, g)


def finite_difference(params, name, idx, fn, step=1e-4):
    tensor = params.tensors[name]
    old = tensor[idx]
    tensor[idx] = old + step
    up = fn()
    tensor[idx] = old - step
    down = fn()
    tensor[idx] = old
    return (up - down) / (2 * step)


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-7)


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(InvalidConfig):
            ModelConfig(vocab_size=5, d_model=6, n_heads=4)

    @pytest.mark.parametrize("field", ["vocab_size", "d_model", "n_layers", "max_len"])
    def test_counts_positive(self, field):
        kwargs = dict(vocab_size=5, d_model=4, n_heads=2)
        kwargs[field] = 0
        with pytest.raises(InvalidConfig):
            ModelConfig(**kwargs)


class TestInit:
    def test_deterministic(self, tiny_config):
        a, b = init_params(tiny_config), init_params(tiny_config)
        assert a.fingerprint() == b.fingerprint()

    def test_shapes(self):
        p = init_params(ModelConfig(vocab_size=10, d_model=8, n_heads=2, n_layers=2, max_len=7))
        assert p["item_embeddings"].shape == (10, 8)
        assert p["positional_embeddings"].shape == (7, 8)
        assert p["preference_projection"].shape == (2, 8)
        assert p["layers.1.ffn.inner"].shape == (8, 32)
        assert (p["layers.0.ln1.scale"] == 1).all() and (p["layers.0.ln1.offset"] == 0).all()

    def test_embedding_variance(self):
        d = 16
        p = init_params(ModelConfig(vocab_size=1000, d_model=d, n_heads=2))
        assert abs(p["item_embeddings"].var() * d - 1.0) < 0.2

    def test_seed_matters(self, tiny_config):
        other = ModelConfig(**{**tiny_config.to_dict(), "seed": 4})
        assert init_params(other).fingerprint() != init_params(tiny_config).fingerprint()


class TestForwardScores:
    def test_shape_and_finite(self, tiny_params):
        s = forward_scores(tiny_params, [1, 2, 3], MID, candidates=[0, 5])
        assert s.shape == (3, 2) and np.isfinite(s).all()
        assert forward_scores(tiny_params, [4], MID).shape == (1, 6)

    def test_zero_projection_ignores_preference(self, tiny_params):
        tiny_params.tensors["preference_projection"][:] = 0
        a = forward_scores(tiny_params, [1, 2, 3], PreferenceVector(0.9, 0.1))
        b = forward_scores(tiny_params, [1, 2, 3], PreferenceVector(0.1, 0.9))
        assert np.array_equal(a, b)

    def test_preference_matters_otherwise(self, tiny_params):
        a = forward_scores(tiny_params, [1, 2, 3], PreferenceVector(0.9, 0.1))
        b = forward_scores(tiny_params, [1, 2, 3], PreferenceVector(0.1, 0.9))
        assert not np.allclose(a, b)

    @pytest.mark.parametrize("replacement", [0, 1, 4, 5])
    def test_causal(self, tiny_params, replacement):
        base = forward_scores(tiny_params, [1, 2, 3], MID)
        other = forward_scores(tiny_params, [1, 2, replacement], MID)
        np.testing.assert_allclose(base[:2], other[:2], rtol=0, atol=1e-13)

    def test_prefix_too_long(self, tiny_params):
        with pytest.raises(PrefixTooLong):
            forward_scores(tiny_params, [0] * 6, MID)
        with pytest.raises(PrefixTooLong):
            forward_scores(tiny_params, [], MID)

    def test_index_out_of_vocab(self, tiny_params):
        with pytest.raises(IndexOutOfVocab):
            forward_scores(tiny_params, [1, 6], MID)
        with pytest.raises(IndexOutOfVocab):
            forward_scores(tiny_params, [1], MID, candidates=[-1])


@pytest.fixture
def fd_problem(tiny_params, small_dataset):
    rng = np.random.default_rng(0)
    batch = SessionBatch.from_sessions(small_dataset.sessions, tiny_params.config.max_len)
    pis = rng.dirichlet([0.5, 0.5], size=len(batch))
    negatives = np.array([0, 2, 3, 5])
    return tiny_params, batch, pis, negatives


class TestBackward:
    def test_matches_finite_differences(self, fd_problem):
        params, batch, pis, negatives = fd_problem
        tape, _ = objective(params, batch, pis, negatives)
        grads = backward(params, tape)

        def loss():
            return objective(params, batch, pis, negatives)[0].output.data.item()

        rng = np.random.default_rng(1)
        names = sorted(params.tensors)
        worst = 0.0
        for _ in range(60):
            name = names[rng.integers(len(names))]
            idx = tuple(rng.integers(s) for s in params[name].shape)
            worst = max(worst, relative_error(grads[name][idx], finite_difference(params, name, idx, loss)))
        assert worst < 1e-4

    def test_penalty_gradient_flows(self, fd_problem):
        params, batch, pis, negatives = fd_problem
        g0 = backward(params, objective(params, batch, pis, negatives, lam=0.0)[0])
        g1 = backward(params, objective(params, batch, pis, negatives, lam=0.5)[0])
        assert any(not np.allclose(g0[k], g1[k]) for k in g0)

    def test_absent_item_gets_exact_zero(self, tiny_params):
        ds = make_dataset([[0, 1, 2], [2, 1]], 6)
        batch = SessionBatch.from_sessions(ds.sessions, 5)
        tape, _ = objective(tiny_params, batch, np.full((2, 2), 0.5), np.array([0, 1, 2, 3]))
        grads = backward(tiny_params, tape)
        # items 4 and 5 are neither inputs, targets nor negatives
        assert (grads["item_embeddings"][4:] == 0.0).all()
        assert np.abs(grads["item_embeddings"][3]).sum() > 0

    def test_seed_linearity(self, fd_problem):
        params, batch, pis, negatives = fd_problem
        one = backward(params, objective(params, batch, pis, negatives)[0], 1.0)
        two = backward(params, objective(params, batch, pis, negatives)[0], 2.0)
        for k in one:
            np.testing.assert_array_equal(two[k], 2.0 * one[k])

    def test_every_tensor_gets_a_gradient(self, fd_problem):
        params, batch, pis, negatives = fd_problem
        grads = backward(params, objective(params, batch, pis, negatives)[0])
        assert set(grads) == set(params.tensors)
        for k, g in grads.items():
            assert g.shape == params[k].shape and np.isfinite(g).all()

    def test_tape_mismatch_after_update(self, fd_problem):
        params, batch, pis, negatives = fd_problem
        tape, _ = objective(params, batch, pis, negatives)
        params.tensors["item_embeddings"][0, 0] += 1e-3
        with pytest.raises(TapeMismatch):
            backward(params, tape)

    def test_tape_without_output(self, tiny_params):
        with pytest.raises(TapeMismatch):
            backward(tiny_params, Tape(tiny_params))
