from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .data import LABELS, Dataset, merge_datasets, split
from .encoders import TextVectorizer, UserFeatureScaler
from .model import (
    GraphContext,
    ModelConfig,
    init_state,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    train,
)
from .validation import check_dataset, check_labels

logger = logging.getLogger(__name__)


class ReportClassifier(ClassifierMixin, BaseEstimator):
    """Joint user-correlation and propagation GCN rumor classifier.

    ``X`` is a :class:`~rumorgcn.data.Dataset` (instances plus the user
    profile table). Prediction is transductive over the user-tweet graph:
    the graph used at ``predict`` time spans the training instances and the
    instances being predicted, but no labels flow through it.

    Parameters
    ----------
    branch : {"full", "propagation", "user"}
        ``"propagation"`` zeroes the user-correlation representation and
        ``"user"`` zeroes the propagation one (ablations).
    validation_fraction : float
        Stratified share of the training data held out for early stopping.
        With 0 the training loss is monitored instead.
    """

    def __init__(
        self,
        branch="full",
        embed_dim=100,
        gru_hidden=64,
        user_hidden=64,
        gcn_hidden=64,
        fc_hidden=64,
        max_len=40,
        min_count=1,
        dropout=0.2,
        k_hop=2,
        lr=5e-3,
        batch_size=16,
        max_epochs=200,
        patience=10,
        validation_fraction=0.1,
        embeddings_path=None,
        random_state=0,
        verbose=False,
    ):
        self.branch = branch
        self.embed_dim = embed_dim
        self.gru_hidden = gru_hidden
        self.user_hidden = user_hidden
        self.gcn_hidden = gcn_hidden
        self.fc_hidden = fc_hidden
        self.max_len = max_len
        self.min_count = min_count
        self.dropout = dropout
        self.k_hop = k_hop
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.embeddings_path = embeddings_path
        self.random_state = random_state
        self.verbose = verbose

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            gru_hidden=self.gru_hidden,
            user_hidden=self.user_hidden,
            gcn_hidden=self.gcn_hidden,
            fc_hidden=self.fc_hidden,
            n_classes=len(LABELS),
            max_len=self.max_len,
            min_count=self.min_count,
            dropout=self.dropout,
            k_hop=self.k_hop,
            lr=self.lr,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            branch=self.branch,
            embeddings_path=self.embeddings_path,
        )

    def fit(self, X, y=None):
        ds = check_labels(check_dataset(X), y)
        seed = int(self.random_state or 0)
        val = None
        fit_part = ds
        if self.validation_fraction and len(ds) >= 10:
            fit_part, val = split(ds, 1.0 - self.validation_fraction, seed)
            if len(val) == 0:
                fit_part, val = ds, None
        seen_users = sorted({u.id for inst in fit_part for u in inst.users})
        scaler = UserFeatureScaler().fit([ds.users[u] for u in seen_users])
        texts = [t for inst in fit_part for t in (inst.text, *(c.text for c in inst.comments))]
        vec = TextVectorizer(self.max_len, self.min_count).fit(texts)
        state = init_state(self._model_config(), vec.vocab_, scaler, seed)
        self.history_ = train(state, fit_part, val, verbose=self.verbose)
        self.state_ = state
        self.train_data_ = ds
        self.classes_ = np.arange(len(LABELS))
        return self

    def _context(self, ds: Dataset) -> GraphContext:
        return GraphContext(merge_datasets(self.train_data_, ds), self.state_)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "state_")
        ds = check_dataset(X)
        return predict_proba(self.state_, self._context(ds), list(ds.instances))

    def predict(self, X) -> np.ndarray:
        # np.argmax breaks ties toward the lowest class index
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y=None, sample_weight=None):
        ds = check_labels(check_dataset(X), y)
        return super().score(ds, ds.labels, sample_weight)

    def save(self, path, extra=None) -> None:
        """Write a checkpoint; the training data is not stored."""
        check_is_fitted(self, "state_")
        save_checkpoint(self.state_, path, {"estimator_params": self.get_params(), **(extra or {})})

    @classmethod
    def load(cls, path, train_data: Dataset):
        """Restore from :meth:`save`; ``train_data`` rebuilds the graph context."""
        state, extra = load_checkpoint(path)
        params = {k: v for k, v in extra.get("estimator_params", {}).items()}
        clf = cls(**params)
        clf.state_ = state
        clf.train_data_ = train_data
        clf.classes_ = np.arange(len(LABELS))
        clf.history_ = extra.get("history", [])
        clf.checkpoint_extra_ = extra
        return clf
