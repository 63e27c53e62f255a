"""Scarce-label node classification on frozen embeddings."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, validate_data

logger = logging.getLogger(__name__)

DEFAULT_REG_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)
DEFAULT_REG = 1e-2


class SplitError(ValueError):
    pass


def parse_validation_rule(rule):
    """``"none"``, ``"fixed_total:N"`` or ``"per_class:M"`` -> ``(kind, count)``."""
    if isinstance(rule, tuple):
        kind, count = rule
    else:
        kind, _, count = str(rule).partition(":")
    kind = kind.strip().lower()
    if kind == "none":
        return ("none", 0)
    if kind not in ("fixed_total", "per_class"):
        raise ValueError(f"unknown validation rule {rule!r}")
    count = int(count)
    if count < 0:
        raise ValueError("validation count must be >= 0")
    return (kind, count)


def format_validation_rule(rule):
    kind, count = parse_validation_rule(rule)
    return "none" if kind == "none" else f"{kind}:{count}"


@dataclass(frozen=True)
class SplitSpec:
    labels_per_class: int
    validation: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.labels_per_class < 1:
            raise ValueError("labels_per_class must be >= 1")
        object.__setattr__(self, "validation", format_validation_rule(self.validation))


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def sample_split(labels, spec: SplitSpec) -> Split:
    """Stratified split: exactly ``c`` training nodes per class.

    ``labels`` is a label vector or a graph carrying one.
    """
    y = getattr(labels, "labels", labels)
    if y is None:
        raise SplitError("graph has no labels")
    y = np.asarray(y)
    c = spec.labels_per_class
    kind, count = parse_validation_rule(spec.validation)
    rng = np.random.default_rng(spec.seed)
    need = c + (count if kind == "per_class" else 0)

    train, val, rest = [], [], []
    for cls in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == cls))
        if len(idx) < need:
            raise SplitError(f"class {cls} has {len(idx)} nodes, need {need}")
        train.append(idx[:c])
        if kind == "per_class":
            val.append(idx[c:need])
        rest.append(idx[need:])
    rest = np.concatenate(rest)
    if kind == "fixed_total":
        if len(rest) < count:
            raise SplitError(f"only {len(rest)} nodes left for a validation set of {count}")
        rest = rng.permutation(rest)
        val.append(rest[:count])
        rest = rest[count:]
    as_ids = lambda parts: np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
    return Split(as_ids(train), as_ids(val), np.sort(rest))


class L2LogisticRegression(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression minimising mean cross-entropy + alpha/2 ||W||^2.

    The intercept is not penalised. Columns are standardised with the
    training data's mean and standard deviation. Solved with L-BFGS to a
    gradient infinity-norm of ``tol``.
    """

    def __init__(self, alpha=DEFAULT_REG, tol=1e-6, max_iter=1000, standardize=True):
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.standardize = standardize

    def _objective(self, theta, X, Y):
        n, d = X.shape
        k = Y.shape[1]
        W = theta[: d * k].reshape(d, k)
        b = theta[d * k:]
        logits = X @ W + b
        logp = log_softmax(logits, axis=1)
        value = -np.sum(Y * logp) / n + 0.5 * self.alpha * np.sum(W * W)
        r = (np.exp(logp) - Y) / n
        grad = np.concatenate([(X.T @ r + self.alpha * W).ravel(), r.sum(axis=0)])
        return value, grad

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale_ = np.where(std > 0, std, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        Xs = (X - self.mean_) / self.scale_
        n, d = Xs.shape
        k = len(self.classes_)
        Y = np.eye(k)[y_idx]

        self.objective_trace_ = []
        res = minimize(
            self._objective,
            np.zeros(d * k + k),
            args=(Xs, Y),
            jac=True,
            method="L-BFGS-B",
            callback=lambda th: self.objective_trace_.append(self._objective(th, Xs, Y)[0]),
            options={"maxiter": self.max_iter, "gtol": self.tol, "ftol": 0.0, "maxfun": 20 * self.max_iter},
        )
        _, grad = self._objective(res.x, Xs, Y)
        self.grad_norm_ = float(np.max(np.abs(grad)))
        self.converged_ = self.grad_norm_ <= self.tol
        self.n_iter_ = int(res.nit)
        if not self.converged_:
            warnings.warn(
                f"logistic regression stopped after {res.nit} iterations with gradient norm {self.grad_norm_:.3g}",
                ConvergenceWarning,
                stacklevel=2,
            )
        self.coef_ = res.x[: d * k].reshape(d, k)
        self.intercept_ = res.x[d * k:]
        return self

    def _scores(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_

    def decision_function(self, X):
        scores = self._scores(X)
        if scores.shape[1] == 2:
            return scores[:, 1] - scores[:, 0]
        return scores

    def predict_proba(self, X):
        return softmax(self._scores(X), axis=1)

    def predict(self, X):
        # np.argmax returns the first maximum: ties go to the lowest class index
        scores = self._scores(X)
        return self.classes_[np.argmax(scores, axis=1)]


def fit_logreg(H, y, split: Split, reg_grid=DEFAULT_REG_GRID, default_reg=DEFAULT_REG, **kwargs):
    """Fit on ``split.train``; choose the penalty on ``split.val`` when it is non-empty.

    Returns ``(classifier, chosen_penalty)``. Validation ties keep the
    earlier grid value.
    """
    H = check_array(H, dtype=np.float64)
    y = np.asarray(y)
    train_y = y[split.train]
    if len(split.val) == 0 or not reg_grid:
        clf = L2LogisticRegression(alpha=default_reg, **kwargs).fit(H[split.train], train_y)
        return clf, default_reg
    best = None
    for reg in reg_grid:
        clf = L2LogisticRegression(alpha=reg, **kwargs).fit(H[split.train], train_y)
        acc = clf.score(H[split.val], y[split.val])
        if best is None or acc > best[0]:
            best = (acc, clf, reg)
    return best[1], best[2]


@dataclass
class EvalResult:
    accuracies: list
    regs: list
    seeds: list
    config: dict = field(default_factory=dict)

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def std(self):
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))

    def summary(self):
        return {
            "mean": self.mean,
            "std": self.std,
            "n_splits": len(self.accuracies),
            "config": self.config,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["split", "seed", "reg", "accuracy"])
            for k, (s, r, a) in enumerate(zip(self.seeds, self.regs, self.accuracies)):
                w.writerow([k, s, repr(float(r)), repr(float(a))])

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")


def evaluate(H, labels, spec: SplitSpec, n_splits=20, reg_grid=DEFAULT_REG_GRID,
             default_reg=DEFAULT_REG) -> EvalResult:
    """Accuracy over ``n_splits`` splits seeded ``spec.seed .. spec.seed + n_splits - 1``."""
    y = getattr(labels, "labels", labels)
    if y is None:
        raise SplitError("graph has no labels")
    y = np.asarray(y)
    accs, regs, seeds = [], [], []
    for s in range(n_splits):
        seed = spec.seed + s
        split = sample_split(y, SplitSpec(spec.labels_per_class, spec.validation, seed))
        clf, reg = fit_logreg(H, y, split, reg_grid, default_reg)
        accs.append(float(clf.score(H[split.test], y[split.test])))
        regs.append(float(reg))
        seeds.append(seed)
    config = {
        "split": asdict(spec),
        "n_splits": n_splits,
        "reg_grid": list(reg_grid),
        "default_reg": default_reg,
        "classifier": "multinomial L2 logistic regression, L-BFGS, gtol=1e-6, train-split standardisation",
    }
    return EvalResult(accs, regs, seeds, config)
