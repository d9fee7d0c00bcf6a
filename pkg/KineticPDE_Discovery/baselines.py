"""Lasso and STRidge baselines over a fixed operator dictionary.

The dictionary holds the four words of the true g-equation and fourteen
distractor compositions of advection and projection. Columns are evaluated
with the same discrete operators the symbolic network uses, so the two
methods see identical terms.
"""

import logging
from dataclasses import dataclass

import numpy as np
import torch

from . import operators
from .exceptions import ConfigurationError, EmptyModelError
from .extract import CoefficientTable, OperatorWord, error_metrics
from .operators import Stencil
from .symnet import evaluate_words

logger = logging.getLogger(__name__)

LASSO_TOLERANCE = 1e-10
ALPHA_GRID = tuple(10.0**k for k in range(-6, 0))

TRUE_WORDS = (
    ((), "g"),
    (("A",), "rho"),
    (("A",), "g"),
    (("P", "A"), "g"),
)

# Words ending in P vanish on mean-free g and P is the identity on lifted ρ,
# so neither appears here.
DISTRACTOR_WORDS = (
    (("A", "A"), "g"),
    (("P", "A", "A"), "g"),
    (("A", "P", "A"), "g"),
    (("A", "A", "A"), "g"),
    (("P", "A", "A", "A"), "g"),
    (("A", "A", "P", "A"), "g"),
    ((), "rho"),
    (("A", "A"), "rho"),
    (("P", "A", "A"), "rho"),
    (("A", "A", "A"), "rho"),
    (("A", "P", "A", "A"), "rho"),
    (("A", "A", "A", "A"), "rho"),
    (("P", "A", "A", "A", "A"), "rho"),
    (("A", "A", "P", "A", "A"), "rho"),
)

DICTIONARY = tuple(OperatorWord.from_code(code, source) for code, source in TRUE_WORDS + DISTRACTOR_WORDS)

_STENCILS = {"g": Stencil.UPWIND, "rho": Stencil.CENTER_TO_FACE}


@dataclass
class DictionaryMatrix:
    """Regression problem A·x ≈ b for the g-equation.

    Attributes:
        A (np.ndarray): (samples, 18) operator evaluations.
        b (np.ndarray): (samples,) central time differences of g.
        words (tuple[OperatorWord]): Column labels.
    """

    A: np.ndarray
    b: np.ndarray
    words: tuple = DICTIONARY

    @property
    def shape(self):
        return self.A.shape


def build_dictionary_matrix(ds):
    """Evaluates the dictionary on every interior time slice of a dataset.

    Raises:
        ConfigurationError: If the dataset has fewer than three slices.
    """

    if ds.nt < 3:
        raise ConfigurationError(f"A central time difference needs 3 slices, the dataset has {ds.nt}")
    grid = ds.grid
    g = ds.g_seq[1:-1]
    inputs = {"g": g, "rho": operators.lift(ds.rho_seq[1:-1], grid)}
    columns = []
    with torch.no_grad():
        for source in ("g", "rho"):
            codes = [w.code for w in DICTIONARY if w.source == source]
            values = evaluate_words(codes, inputs[source], grid, _STENCILS[source])
            columns.extend((w, values[w.code]) for w in DICTIONARY if w.source == source)
        order = {w: i for i, w in enumerate(DICTIONARY)}
        columns.sort(key=lambda item: order[item[0]])
        A = np.stack([value.reshape(-1).numpy() for _, value in columns], axis=1)
        b = ((ds.g_seq[2:] - ds.g_seq[:-2]) / (2.0 * ds.dt)).reshape(-1).numpy()
    return DictionaryMatrix(np.ascontiguousarray(A), b.copy())


def _soft_threshold(value, alpha):
    return np.sign(value) * max(abs(value) - alpha, 0.0)


def lasso(A, b, alpha, iters=100000, tol=LASSO_TOLERANCE):
    """Minimizes ½‖Ax-b‖² + α‖x‖₁ by cyclic coordinate descent.

    Works on the Gram matrix AᵀA, so one sweep costs O(columns²). Zero
    columns keep a zero coefficient.

    Returns:
        np.ndarray: Coefficients, one per column.
    """

    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.size == 0:
        raise ConfigurationError("The dictionary matrix is empty")
    if alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    gram = A.T @ A
    target = A.T @ b
    x = np.zeros(A.shape[1])
    for _ in range(iters):
        largest = 0.0
        for j in range(len(x)):
            if gram[j, j] == 0.0:
                continue
            rho = target[j] - gram[j] @ x + gram[j, j] * x[j]
            new = _soft_threshold(rho, alpha) / gram[j, j]
            largest = max(largest, abs(new - x[j]))
            x[j] = new
        if largest < tol:
            break
    else:
        logger.warning("Lasso stopped after %d sweeps without reaching tol=%g", iters, tol)
    return x


def lasso_sweep(dm, exact, alphas=ALPHA_GRID):
    """Runs Lasso over an α grid and keeps the fit with the lowest Type-II error.

    Returns:
        tuple[float, np.ndarray]: The chosen α and its coefficients.
    """

    best = None
    for alpha in alphas:
        x = lasso(dm.A, dm.b, alpha)
        type2 = error_metrics(exact, to_table(dm, x))[1]
        logger.debug("lasso alpha=%g: Type-II %.4f%%", alpha, type2)
        if best is None or type2 < best[0]:
            best = (type2, alpha, x)
    return best[1], best[2]


def _ridge(A, b, ridge_lambda):
    if ridge_lambda == 0:
        return np.linalg.lstsq(A, b, rcond=None)[0]
    return np.linalg.solve(A.T @ A + ridge_lambda * np.eye(A.shape[1]), A.T @ b)


def stridge(A, b, ridge_lambda=1e-5, hard_threshold=1e-2, sweeps=10):
    """Sequential thresholded ridge regression.

    Columns are scaled to unit 2-norm for the ridge solves; the hard
    threshold applies to coefficients in the original units.

    Raises:
        EmptyModelError: If thresholding removes every column.
    """

    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if A.size == 0:
        raise ConfigurationError("The dictionary matrix is empty")
    if ridge_lambda < 0 or hard_threshold <= 0:
        raise ConfigurationError("ridge_lambda must be >= 0 and hard_threshold > 0")
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0.0] = 1.0
    scaled = A / norms

    active = np.ones(A.shape[1], dtype=bool)
    x = _ridge(scaled, b, ridge_lambda) / norms
    for _ in range(sweeps):
        active &= np.abs(x) >= hard_threshold
        if not active.any():
            raise EmptyModelError(f"Every coefficient fell below the threshold {hard_threshold}")
        x = np.zeros_like(x)
        x[active] = _ridge(scaled[:, active], b, ridge_lambda) / norms[active]
    return x


def to_table(dm, x):
    """A g-equation CoefficientTable from regression coefficients."""

    entries = {word: float(value) for word, value in zip(dm.words, x)}
    return CoefficientTable("g", entries, dict(entries))
