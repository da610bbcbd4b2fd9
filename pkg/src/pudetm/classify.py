"""Plug-in Bayes classifier for the target domain."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.special import expit

from .core import Theta
from .errors import DataError, DomainError


@dataclass(frozen=True)
class Prediction:
    """Posterior of the positive class and the thresholded label."""

    phi: float
    label: int
    threshold: float = 0.5


def log_odds(theta: Theta, x) -> np.ndarray:
    """``log(pi / (1 - pi)) + (alpha1 - alpha2) + x (beta1 - beta2)`` row by row."""
    xs = _as_matrix(theta, x)
    return (math.log(theta.pi) - math.log1p(-theta.pi) + (theta.alpha1 - theta.alpha2)
            + xs @ (theta.beta1 - theta.beta2))


def _as_matrix(theta: Theta, x) -> np.ndarray:
    xs = np.asarray(x, dtype=float)
    if xs.ndim == 1:
        xs = xs.reshape(1, -1)
    if xs.ndim != 2 or xs.shape[1] != theta.p:
        raise DataError(f"features have shape {np.shape(x)} but theta has p={theta.p}")
    if not np.all(np.isfinite(xs)):
        raise DataError("features contain non-finite values")
    return xs


def posterior(theta: Theta, x):
    """Target-domain probability that ``x`` is positive.

    A single feature vector gives a float; a matrix gives one value per row.
    """
    phi = expit(log_odds(theta, x))
    if np.ndim(x) == 1:
        return float(phi[0])
    return phi


def predict_labels(theta: Theta, xs, threshold: float = 0.5) -> np.ndarray:
    """Labels ``1{phi > threshold}`` as an integer array (ties go to 0)."""
    phi = np.atleast_1d(posterior(theta, _as_matrix(theta, xs)))
    return (phi > threshold).astype(int)


def predict(theta: Theta, xs, threshold: float = 0.5) -> List[Prediction]:
    phi = np.atleast_1d(posterior(theta, _as_matrix(theta, xs)))
    return [Prediction(float(f), int(f > threshold), threshold) for f in phi]


def accuracy(preds: Sequence, truth: Sequence[int]) -> float:
    """Fraction of predictions matching ``truth``.

    ``preds`` may hold :class:`Prediction` objects or bare 0/1 labels.
    """
    labels = np.array([getattr(p, "label", p) for p in preds], dtype=int)
    truth = np.asarray(truth, dtype=int)
    if labels.size == 0:
        raise DomainError("accuracy of an empty prediction set is undefined")
    if labels.shape != truth.shape:
        raise DomainError(f"{labels.size} predictions but {truth.size} labels")
    return float(np.mean(labels == truth))


def l1_posterior_distance(theta_hat: Theta, theta_true: Theta, target_sample) -> float:
    """Mean of ``|phi(x; theta_hat) - phi(x; theta_true)|`` over a target sample."""
    xs = np.asarray(target_sample, dtype=float)
    if xs.size == 0:
        raise DomainError("the target sample is empty")
    a = np.atleast_1d(posterior(theta_hat, _as_matrix(theta_hat, xs)))
    b = np.atleast_1d(posterior(theta_true, _as_matrix(theta_true, xs)))
    return float(np.mean(np.abs(a - b)))
