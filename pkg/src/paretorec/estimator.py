"""scikit-learn style wrapper around the preference-conditioned recommender."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import Front, recall_at_k, sweep_front
from .model import ModelConfig, Tape, candidate_logits, hidden_states, init_params
from .sampling import preference_grid
from .training import TrainConfig, train
from .validation import check_dataset, check_preference, check_prefixes


class ParetoSessionRecommender(BaseEstimator):
    """Next-click recommender covering the click/order trade-off with one model.

    Training samples a preference ``[pi_c, pi_o]`` per session from a
    Dirichlet distribution and feeds it to the model; at inference any
    preference on the simplex selects a point of the learned front.

    Parameters
    ----------
    d_model, n_layers, n_heads, max_len, dropout
        Backbone size.  ``max_len`` caps the prefix length seen by the model.
    batch_size, learning_rate, epochs
        Optimizer settings (Adam).
    reg_lambda : float
        Weight of the non-uniformity penalty; 0 disables it.
    beta : pair of float
        Dirichlet concentration for the training preferences.
    g : {"softmax", "identity"}
        Map applied to the normalized loss contributions before the penalty.
    negatives : int
        Sampled negatives per batch for the click loss.
    random_state : int
        Seeds initialization, batching, preference and negative sampling.
    """

    def __init__(
        self,
        d_model=64,
        n_layers=3,
        n_heads=2,
        max_len=50,
        dropout=0.0,
        batch_size=256,
        learning_rate=1e-4,
        epochs=20,
        reg_lambda=0.5,
        beta=(0.5, 0.5),
        g="softmax",
        negatives=128,
        random_state=0,
    ):
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.max_len = max_len
        self.dropout = dropout
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.reg_lambda = reg_lambda
        self.beta = beta
        self.g = g
        self.negatives = negatives
        self.random_state = random_state

    def _model_config(self, vocab_size):
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            max_len=self.max_len,
            dropout=self.dropout,
            seed=self.random_state,
        )

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            lam=self.reg_lambda,
            beta=tuple(self.beta),
            negatives=self.negatives,
            seed=self.random_state,
            g=self.g,
        )

    def fit(self, X, y=None, log_file=None):
        X = check_dataset(X)
        cfg = self._train_config()
        self.params_ = init_params(self._model_config(X.n_items))
        self.optimizer_, self.history_ = train(X, self.params_, cfg, log_file=log_file)
        self.train_config_ = cfg
        self.vocab_ = X.vocab
        self.n_items_ = X.n_items
        return self

    def decision_function(self, X, pi=(1.0, 0.0)):
        """Logits over the catalog for the next click after each prefix in ``X``."""
        check_is_fitted(self, "params_")
        pi = check_preference(pi)
        prefixes = check_prefixes(X, self.n_items_, self.params_.config.max_len)
        lengths = np.array([p.size for p in prefixes])
        items = np.zeros((len(prefixes), lengths.max()), dtype=np.int64)
        for b, p in enumerate(prefixes):
            items[b, : p.size] = p
        tape = Tape(self.params_)
        h = hidden_states(tape, items, np.tile(pi.as_array(), (len(prefixes), 1)))
        logits = candidate_logits(tape, h, np.arange(self.n_items_)).data
        return logits[np.arange(len(prefixes)), lengths - 1]

    def predict(self, X, pi=(1.0, 0.0), k=20):
        """Top-``k`` item indices per prefix, best first; ties go to the lower index."""
        scores = self.decision_function(X, pi)
        order = np.argsort(-scores, axis=1, kind="stable")
        return order[:, :k]

    def score(self, X, y=None, pi=(1.0, 0.0), k=20):
        """Recall@k on a held-out dataset (pure click preference by default)."""
        check_is_fitted(self, "params_")
        return recall_at_k(self.params_, check_dataset(X), check_preference(pi), k)

    def front(self, X, n_points=26, clamp=1e-3, negatives=128, seed=0) -> Front:
        check_is_fitted(self, "params_")
        return sweep_front(self.params_, check_dataset(X), preference_grid(n_points, clamp), negatives, seed)

    def save(self, path):
        check_is_fitted(self, "params_")
        save_checkpoint(self.params_, self.optimizer_, self.train_config_, path)

    @classmethod
    def load(cls, path) -> "ParetoSessionRecommender":
        params, opt, cfg = load_checkpoint(path)
        mc = params.config
        kwargs = dict(
            d_model=mc.d_model, n_layers=mc.n_layers, n_heads=mc.n_heads,
            max_len=mc.max_len, dropout=mc.dropout, random_state=mc.seed,
        )
        if cfg is not None:
            kwargs.update(
                batch_size=cfg.batch_size, learning_rate=cfg.learning_rate, epochs=cfg.epochs,
                reg_lambda=cfg.lam, beta=cfg.beta, g=cfg.g, negatives=cfg.negatives,
            )
        est = cls(**kwargs)
        est.params_, est.optimizer_, est.train_config_ = params, opt, cfg
        est.n_items_ = mc.vocab_size
        est.history_ = []
        return est
