"""scikit-learn style wrapper around the enhancement pipeline.

Lets the pipeline compose with sklearn tooling: fit on an (input, target)
image pair, then transform new images of the same resolution.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import optim, transform
from .imaging import check_image


class BpamEnhancer(BaseEstimator, TransformerMixin):
    """Pixel-adaptive MLP enhancer with a fit/transform interface.

    fit(X, y) learns grids and guidance nets mapping image X to target y;
    transform(X) applies them. X and y are (H, W, 3) unit-range arrays.
    """

    def __init__(self, mode="mlp", decomposed=True, grid_ratio=8, depth=8,
                 iters=500, lr_max=3e-4, lr_min=4e-6, train_mode="direct-grids",
                 w_mse=1.0, w_ssim=0.5, seed=0):
        self.mode = mode
        self.decomposed = decomposed
        self.grid_ratio = grid_ratio
        self.depth = depth
        self.iters = iters
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.train_mode = train_mode
        self.w_mse = w_mse
        self.w_ssim = w_ssim
        self.seed = seed

    def _config(self):
        return transform.PipelineConfig(
            mode=self.mode, decomposed=self.decomposed,
            grid_ratio=self.grid_ratio, depth=self.depth)

    def fit(self, X, y):
        X = check_image(np.asarray(X, dtype=np.float32), "X")
        y = check_image(np.asarray(y, dtype=np.float32), "y")
        result = optim.train_toy(
            X, y, self._config(), mode=self.train_mode,
            sched=optim.Schedule(self.lr_max, self.lr_min, self.iters),
            weights=optim.LossWeights(self.w_mse, self.w_ssim),
            seed=self.seed)
        self.grids_ = result.grids
        self.gnets_ = result.gnets
        self.loss_trace_ = result.trace
        return self

    def transform(self, X):
        if not hasattr(self, "grids_"):
            raise NotFittedError("BpamEnhancer is not fitted; call fit first")
        X = check_image(np.asarray(X, dtype=np.float32), "X")
        return transform.enhance(X, self.grids_, self.gnets_, self._config())

    def predict(self, X):
        return self.transform(X)

    def score(self, X, y):
        """Negative MSE between transform(X) and y (higher is better)."""
        out = self.transform(X)
        y = check_image(np.asarray(y, dtype=np.float32), "y")
        return -float(np.mean((out - y) ** 2))
