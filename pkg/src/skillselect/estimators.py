"""Scikit-learn style wrappers around the heightfield CNN.

These estimators let the predictors compose with sklearn pipelines and
model selection utilities while the numerical core stays in ``nnet``.
``HeightfieldRegressor`` is the fit/predict surface over the from-scratch
CNN; ``HeightfieldPreprocessor`` is a transformer that repairs NaN-marked
occlusions and re-centers grids the same way the runtime pipeline does.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nnet
from .terrain import COLS, ROWS, Heightfield, forward_fill, normalize


def check_heightfield_array(X, allow_nan: bool = False) -> np.ndarray:
    """Validate and reshape input into an (n, 31, 11) float array.

    Accepts (n, 31, 11) grids or (n, 341) flattened rows. NaN marks an
    occluded cell and is only allowed when ``allow_nan`` is set.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 2 and X.shape == (ROWS, COLS):
        X = X[None]
    elif X.ndim == 2 and X.shape[1] == ROWS * COLS:
        X = X.reshape(-1, ROWS, COLS)
    if X.ndim != 3 or X.shape[1:] != (ROWS, COLS):
        raise ValueError(
            f"expected (n, {ROWS}, {COLS}) or (n, {ROWS * COLS}) heightfields, got {X.shape}"
        )
    if not allow_nan and not np.isfinite(X).all():
        raise ValueError("heightfields contain NaN or inf; preprocess occlusions first")
    return X


class HeightfieldRegressor(BaseEstimator, RegressorMixin):
    """CNN regressor over 31x11 heightfields.

    Parameters
    ----------
    head : {'viability', 'cot'}
        'viability' applies a sigmoid so predictions lie in (0, 1);
        'cot' is linear with predictions clamped to >= 0.
    learning_rate, momentum, batch_size, epochs, seed
        SGD-with-momentum training settings; the seed drives both the
        weight initialization and the per-epoch shuffle.
    """

    def __init__(
        self,
        head: str = "viability",
        learning_rate: float = 0.005,
        momentum: float = 0.9,
        batch_size: int = 64,
        epochs: int = 30,
        seed: int = 0,
    ):
        self.head = head
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def fit(self, X, y):
        X = check_heightfield_array(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} samples but {len(y)} labels")
        head_kind = nnet.HeadKind(self.head)
        cfg = nnet.TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
        )
        model = nnet.init_model(head_kind, seed=self.seed)
        self.model_, self.history_ = nnet.train_arrays(model, X, y, None, None, cfg)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_heightfield_array(X)
        return nnet.predict_batch(self.model_, X)


class HeightfieldPreprocessor(BaseEstimator, TransformerMixin):
    """Repair NaN-marked occlusions and center heightfield batches.

    Occluded cells are forward-filled column-wise from the back of the
    grid; when ``center`` is set, the cell under the base is subtracted
    from every value afterwards.
    """

    def __init__(self, center: bool = True):
        self.center = center

    def fit(self, X, y=None):
        del X, y
        return self

    def transform(self, X):
        X = check_heightfield_array(X, allow_nan=True)
        out = np.empty_like(X)
        for i, grid in enumerate(X):
            mask = ~np.isfinite(grid)
            hf = Heightfield(values=np.where(mask, 0.0, grid), mask=mask)
            hf = forward_fill(hf)
            if self.center:
                hf = normalize(hf)
            out[i] = hf.values
        return out
