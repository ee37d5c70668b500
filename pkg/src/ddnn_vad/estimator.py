"""scikit-learn compatible front end for the denoising DNN VAD."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .features import fit_norm_stats, normalize
from .finetune import FinetuneConfig, assemble_classifier, finetune, random_classifier
from .network import DdnnModel
from .pretrain import PretrainConfig, run_dbn_pretraining, run_pretraining

PRETRAIN_MODES = ("denoising", "dbn", "none")


class DDNNClassifier(ClassifierMixin, BaseEstimator):
    """Frame-level speech/non-speech classifier.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(54, 7, 7)
        Widths of the encoder stack; its length is the network depth.
    pretrain : {"denoising", "dbn", "none"}, default="denoising"
        ``"denoising"`` reconstructs clean features from noisy ones and needs
        ``X_clean`` at fit time.  ``"dbn"`` stacks CD-1 RBMs on the noisy
        features.  ``"none"`` starts fine-tuning from random weights.
    clean_method : {"autoencoder", "cd1"}, default="autoencoder"
        How the accompanying clean-to-clean stack is pre-trained.
    pretrain_learning_rate, pretrain_epochs, finetune_learning_rate, finetune_epochs, batch_size
        Plain minibatch SGD settings for the two phases.
    normalize : bool, default=True
        Fit per-dimension min/max scaling on the training data.  Set to False
        when inputs are already in [0, 1].
    random_state : int, default=0
        Seeds initialisation, shuffling and Gibbs sampling.

    Attributes
    ----------
    model_ : DdnnModel
    pretrain_state_ : PretrainState or None
    training_log_ : list of EpochRecord
    classes_ : ndarray of shape (2,)
    """

    def __init__(self, hidden_layer_sizes=(54, 7, 7), pretrain="denoising",
                 clean_method="autoencoder", pretrain_learning_rate=0.004, pretrain_epochs=200,
                 finetune_learning_rate=0.005, finetune_epochs=130, batch_size=512,
                 normalize=True, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.pretrain = pretrain
        self.clean_method = clean_method
        self.pretrain_learning_rate = pretrain_learning_rate
        self.pretrain_epochs = pretrain_epochs
        self.finetune_learning_rate = finetune_learning_rate
        self.finetune_epochs = finetune_epochs
        self.batch_size = batch_size
        self.normalize = normalize
        self.random_state = random_state

    def _configs(self):
        pcfg = PretrainConfig(tuple(self.hidden_layer_sizes), self.pretrain_learning_rate,
                              self.pretrain_epochs, self.batch_size, int(self.random_state),
                              self.clean_method)
        fcfg = FinetuneConfig(self.finetune_learning_rate, self.finetune_epochs,
                              self.batch_size, int(self.random_state))
        return pcfg, fcfg

    def _scale(self, X, stats):
        return normalize(X, stats) if stats is not None else X

    def fit(self, X, y, X_clean=None, X_dev=None, y_dev=None):
        """Pre-train (if configured) and fine-tune on noisy features ``X``.

        ``X_clean`` holds the clean features of the same frames, row for row.
        """
        if self.pretrain not in PRETRAIN_MODES:
            raise ValueError(f"pretrain must be one of {PRETRAIN_MODES}, got {self.pretrain!r}")
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two classes, got {len(self.classes_)}")
        self.n_features_in_ = X.shape[1]
        pcfg, fcfg = self._configs()

        norm = fit_norm_stats(X) if self.normalize else None
        Xn = self._scale(X, norm)

        if self.pretrain == "denoising":
            if X_clean is None:
                raise ValueError("denoising pre-training needs X_clean")
            X_clean = check_array(X_clean, dtype=np.float64)
            if X_clean.shape != X.shape:
                raise ValueError(f"X_clean shape {X_clean.shape} != X shape {X.shape}")
            clean_norm = fit_norm_stats(X_clean) if self.normalize else None
            state = run_pretraining(Xn, self._scale(X_clean, clean_norm), pcfg)
        elif self.pretrain == "dbn":
            state = run_dbn_pretraining(Xn, pcfg)
        else:
            state = None

        if state is None:
            model = random_classifier(X.shape[1], pcfg.layer_sizes, pcfg.seed, norm)
        else:
            model = assemble_classifier(state, pcfg.seed, pcfg.depth, norm)

        dev = None, None
        if X_dev is not None:
            X_dev = check_array(X_dev, dtype=np.float64)
            dev = self._scale(X_dev, norm), np.searchsorted(self.classes_, y_dev)
        self.model_, self.training_log_ = finetune(model, Xn, y_idx, fcfg, *dev)
        self.pretrain_state_ = state
        return self

    @classmethod
    def from_model(cls, model: DdnnModel, classes=(0, 1)) -> "DDNNClassifier":
        """Wrap an already trained model, e.g. one loaded from disk."""
        est = cls(hidden_layer_sizes=tuple(model.layer_sizes[1:]),
                  normalize=model.norm_stats is not None, random_state=model.seed)
        est.model_ = model
        est.classes_ = np.asarray(classes)
        est.n_features_in_ = model.layer_sizes[0]
        est.pretrain_state_ = None
        est.training_log_ = []
        return est

    def _check(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, model expects {self.n_features_in_}")
        return self._scale(X, self.model_.norm_stats)

    def decision_function(self, X):
        """Speech probability of each frame."""
        X = self._check(X)
        return self.model_.predict_proba(X)

    def predict_proba(self, X):
        p = self.decision_function(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.decision_function(X)
        return self.classes_[(p >= 0.5).astype(int)]
