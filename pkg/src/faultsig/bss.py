"""Maximum-likelihood ICA for the square mixing model ``x = A s``.

The unmixing matrix ``W`` is fitted in whitened coordinates by natural-gradient
ascent of the log-likelihood

    L(W) = sum_i mean_t log p_i(u_i(t)) + log|det W|,    u = W z,

where ``z`` is the whitened observation. (Writing the determinant term as
``-log|det W^-1|`` gives the same value.) The constant contributed by the
whitening transform is dropped; it does not move the maximiser.

Two source models are available, each a normalized density matched to its
score function ``phi = -d log p / du``:

* super-Gaussian: ``p(u) = 1 / (pi cosh u)``, ``phi(u) = tanh u``
* sub-Gaussian: ``p(u) = exp(-u^4 / 4) / c``, ``c = Gamma(1/4) / sqrt(2)``,
  ``phi(u) = u^3``

The adaptive prior picks one of the two per component at every iteration.
The default rule is the extended-Infomax stability statistic
``E[sech^2 u] E[u^2] - E[u tanh u]`` (positive: super-Gaussian), a smooth
stand-in for the kurtosis sign that avoids self-consistent spurious
solutions; ``switch_rule="kurtosis"`` uses the sign of the excess kurtosis.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .records import MultiChannelRecord, SourceSet

logger = logging.getLogger(__name__)

LOG_PI = math.log(math.pi)
LOG_SUB_NORM = math.log(math.gamma(0.25) / math.sqrt(2.0))
MIN_EIG_RATIO = 1e-10
MIN_ABS_DET = 1e-12
MAX_HALVINGS = 30
STEP_GROWTH = 1.1
MAX_STEP_GROWTH = 10.0
WHITENESS_TOLERANCE = 0.05
SWITCH_RULES = ("stability", "kurtosis")


class DegenerateInputError(ValueError):
    """The observations do not span as many dimensions as they have channels."""


class Prior(str, enum.Enum):
    SUPER_GAUSSIAN = "super"
    SUB_GAUSSIAN = "sub"
    ADAPTIVE = "adaptive"


SourcePrior = Union[Prior, Sequence[Prior]]


@dataclass(frozen=True)
class Whitener:
    mean: np.ndarray
    transform: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.transform @ (np.asarray(x) - self.mean[:, np.newaxis])

    @classmethod
    def identity(cls, n: int) -> "Whitener":
        return cls(np.zeros(n), np.eye(n))


@dataclass(frozen=True)
class IcaConfig:
    learning_rate: float = 0.1
    max_iterations: int = 500
    tolerance: float = 1e-6
    seed: int = 0
    prior: SourcePrior = Prior.ADAPTIVE
    switch_rule: str = "stability"

    def __post_init__(self) -> None:
        if self.switch_rule not in SWITCH_RULES:
            raise ValueError(f"switch_rule must be one of {SWITCH_RULES}")
        if not (self.learning_rate > 0 and self.max_iterations > 0 and self.tolerance > 0):
            raise ValueError("learning_rate, max_iterations and tolerance must be > 0")
        prior = self.prior
        if isinstance(prior, (str, Prior)):
            prior = Prior(prior)
        else:
            prior = tuple(Prior(p) for p in prior)
            if Prior.ADAPTIVE in prior:
                raise ValueError("per-channel priors must be super or sub")
        object.__setattr__(self, "prior", prior)


@dataclass(frozen=True)
class UnmixingMatrix:
    """Fitted unmixing matrix together with the whitening it applies to.

    Attributes:
        w: ``N x N`` unmixing matrix acting on whitened data.
        whitener: Centering and whitening applied before ``w``.
        fit_iterations: Accepted ascent steps.
        final_objective: Log-likelihood at ``w``.
        converged: Whether the step norm fell below the tolerance.
        objective_history: Objective after every accepted step.
        prior_switches: Iterations at which the adaptive prior changed; the
            objective is only comparable between consecutive switches.
        priors: Source model used for each component at the end of the fit.
    """

    w: np.ndarray
    whitener: Whitener
    fit_iterations: int = 0
    final_objective: float = float("nan")
    converged: bool = True
    objective_history: tuple[float, ...] = field(default=(), repr=False)
    prior_switches: tuple[int, ...] = field(default=(), repr=False)
    priors: tuple[Prior, ...] = ()

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"unmixing matrix must be square, got {w.shape}")
        if abs(np.linalg.det(w)) <= MIN_ABS_DET:
            raise ValueError("unmixing matrix is singular")
        object.__setattr__(self, "w", w)

    @property
    def full(self) -> np.ndarray:
        """Combined map from centered observations to sources, ``W V``."""
        return self.w @ self.whitener.transform

    def scaled(self, c: float) -> "UnmixingMatrix":
        return UnmixingMatrix(c * self.w, self.whitener, self.fit_iterations,
                              self.final_objective, self.converged)


# -- whitening ----------------------------------------------------------------


def center_whiten(x: MultiChannelRecord) -> tuple[MultiChannelRecord, Whitener]:
    """Zero-mean, identity-covariance version of ``x`` (symmetric whitening).

    Covariances use the ``1/T`` normalization throughout.

    Raises:
        DegenerateInputError: If the sample covariance is (numerically) singular.
    """
    n, t = x.data.shape
    if n < 2:
        raise ValueError("whitening needs at least two channels")
    if t < 10 * n:
        raise ValueError(f"whitening {n} channels needs at least {10 * n} samples")
    mean = x.data.mean(axis=1)
    xc = x.data - mean[:, np.newaxis]
    cov = xc @ xc.T / t
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval[0] <= MIN_EIG_RATIO * eigval[-1] or eigval[-1] <= 0:
        raise DegenerateInputError(
            f"sample covariance is singular (eigenvalues {eigval.tolist()}); "
            "remove linearly dependent channels"
        )
    transform = (eigvec / np.sqrt(eigval)) @ eigvec.T
    wh = Whitener(mean, transform)
    return x.with_data(transform @ xc), wh


# -- source models ------------------------------------------------------------


def excess_kurtosis(u: np.ndarray) -> np.ndarray:
    u = np.atleast_2d(u)
    u = u - u.mean(axis=1, keepdims=True)
    u2 = u * u
    m2 = u2.mean(axis=1)
    m4 = (u2 * u2).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(m2 > 0, m4 / np.where(m2 > 0, m2, 1.0) ** 2 - 3.0, 0.0)
    return k


def super_gaussian_statistic(u: np.ndarray) -> np.ndarray:
    """``E[sech^2 u] E[u^2] - E[u tanh u]`` per row; positive for super-Gaussian rows."""
    u = np.atleast_2d(u)
    th = np.tanh(u)
    return (1.0 - th * th).mean(axis=1) * (u * u).mean(axis=1) - (th * u).mean(axis=1)


def _resolve(prior: SourcePrior, u: np.ndarray, rule: str = "stability") -> tuple[Prior, ...]:
    n = u.shape[0]
    if isinstance(prior, Prior):
        if prior is Prior.ADAPTIVE:
            stat = excess_kurtosis(u) if rule == "kurtosis" else super_gaussian_statistic(u)
            return tuple(
                Prior.SUPER_GAUSSIAN if k >= 0 else Prior.SUB_GAUSSIAN for k in stat
            )
        return (prior,) * n
    kinds = tuple(Prior(p) for p in prior)
    if len(kinds) != n:
        raise ValueError(f"{len(kinds)} priors for {n} components")
    return kinds


def log_density(u: np.ndarray, kind: Prior) -> np.ndarray:
    if kind is Prior.SUPER_GAUSSIAN:
        a = np.abs(u)
        # log cosh(u) = |u| + log(1 + exp(-2|u|)) - log 2
        return -(a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)) - LOG_PI
    if kind is Prior.SUB_GAUSSIAN:
        u2 = u * u
        return -0.25 * u2 * u2 - LOG_SUB_NORM
    raise ValueError(f"no density for prior {kind}")


def score(u: np.ndarray, kind: Prior) -> np.ndarray:
    if kind is Prior.SUPER_GAUSSIAN:
        return np.tanh(u)
    if kind is Prior.SUB_GAUSSIAN:
        return u * u * u
    raise ValueError(f"no score for prior {kind}")


def _objective(w: np.ndarray, z: np.ndarray, kinds: Sequence[Prior]) -> tuple[float, np.ndarray]:
    sign, logdet = np.linalg.slogdet(w)
    if sign == 0 or not np.isfinite(logdet):
        return -math.inf, np.empty(0)
    u = w @ z
    total = logdet
    for i, kind in enumerate(kinds):
        total += float(np.mean(log_density(u[i], kind)))
    return total, u


def log_likelihood(w: np.ndarray, x_whitened: MultiChannelRecord | np.ndarray,
                   prior: SourcePrior = Prior.SUPER_GAUSSIAN) -> float:
    """Average log-likelihood of whitened data under unmixing ``w``.

    Raises:
        ValueError: If ``w`` is singular.
    """
    w = np.asarray(w, dtype=np.float64)
    z = x_whitened.data if isinstance(x_whitened, MultiChannelRecord) else np.atleast_2d(x_whitened)
    if abs(np.linalg.det(w)) <= 0:
        raise ValueError("log-likelihood undefined for singular w")
    kinds = _resolve(prior, w @ z)
    return _objective(w, z, kinds)[0]


def _phi_u(u: np.ndarray, kinds: Sequence[Prior]) -> np.ndarray:
    phi = np.empty_like(u)
    for i, kind in enumerate(kinds):
        phi[i] = score(u[i], kind)
    return phi @ u.T / u.shape[1]


def natural_gradient(w: np.ndarray, z: np.ndarray, prior: SourcePrior) -> np.ndarray:
    """Ascent direction ``(I - E[phi(u) u^T]) W``."""
    u = w @ z
    kinds = _resolve(prior, u)
    return (np.eye(w.shape[0]) - _phi_u(u, kinds)) @ w


def euclidean_gradient(w: np.ndarray, z: np.ndarray, prior: SourcePrior) -> np.ndarray:
    """Plain gradient ``dL/dW = (I - E[phi(u) u^T]) W^-T``; natural = this @ W^T W."""
    u = w @ z
    kinds = _resolve(prior, u)
    return (np.eye(w.shape[0]) - _phi_u(u, kinds)) @ np.linalg.inv(w).T


# -- fitting ------------------------------------------------------------------


def _initial_w(n: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    return np.eye(n) + rng.uniform(-0.01, 0.01, (n, n))


def ica_fit(
    x_whitened: MultiChannelRecord,
    cfg: IcaConfig = IcaConfig(),
    whitener: Whitener | None = None,
) -> UnmixingMatrix:
    """Natural-gradient maximum-likelihood ICA with step halving.

    Every iteration proposes ``W + lr * G``; while that lowers the objective
    the step is halved (up to 30 times). An accepted step grows ``lr`` by 10%
    for the next iteration, up to ten times ``cfg.learning_rate``. The fit stops when an accepted step
    has Frobenius norm below ``cfg.tolerance`` or after ``cfg.max_iterations``;
    in the latter case the result carries ``converged=False``.

    Args:
        x_whitened: Whitened observations (see :func:`center_whiten`).
        cfg: Optimizer settings and source model.
        whitener: Whitening to store with the result; identity if omitted.
    """
    z = x_whitened.data
    n, t = z.shape
    if whitener is None:
        whitener = Whitener.identity(n)
    elif whitener.transform.shape != (n, n):
        raise ValueError("whitener does not match the data")
    cov = z @ z.T / t - np.outer(z.mean(axis=1), z.mean(axis=1))
    off = float(np.linalg.norm(cov - np.eye(n)))
    if off > WHITENESS_TOLERANCE:
        logger.warning("ICA input is not white (|cov - I|_F = %.3g)", off)

    w = _initial_w(n, cfg.seed)
    kinds = _resolve(cfg.prior, w @ z, cfg.switch_rule)
    obj, u = _objective(w, z, kinds)
    history: list[float] = []
    switches: list[int] = []
    converged = False
    eye = np.eye(n)
    lr = cfg.learning_rate
    max_lr = MAX_STEP_GROWTH * cfg.learning_rate
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if cfg.prior is Prior.ADAPTIVE:
            new_kinds = _resolve(cfg.prior, u, cfg.switch_rule)
            if new_kinds != kinds:
                kinds = new_kinds
                obj, u = _objective(w, z, kinds)
                switches.append(it)
        grad = (eye - _phi_u(u, kinds)) @ w
        for _ in range(MAX_HALVINGS):
            cand = w + lr * grad
            cand_obj, cand_u = _objective(cand, z, kinds)
            if cand_obj >= obj:
                break
            lr *= 0.5
        else:
            # no ascent possible at float precision: a numerical stationary point
            converged = lr * float(np.linalg.norm(grad)) < cfg.tolerance
            it -= 1
            break
        step = lr * float(np.linalg.norm(grad))
        w, obj, u = cand, cand_obj, cand_u
        history.append(obj)
        lr = min(lr * STEP_GROWTH, max_lr)
        if step < cfg.tolerance:
            converged = True
            break
    if not converged:
        logger.info("ICA stopped after %d iterations without converging", it)
    return UnmixingMatrix(
        w, whitener, it, obj, converged, tuple(history), tuple(switches), kinds
    )


def fit_unmixing(x: MultiChannelRecord, cfg: IcaConfig = IcaConfig()) -> UnmixingMatrix:
    """Whiten ``x`` and fit the unmixing matrix in one call."""
    z, wh = center_whiten(x)
    return ica_fit(z, cfg, wh)


def separate(w: UnmixingMatrix, x: MultiChannelRecord) -> MultiChannelRecord:
    """Source estimates ``u = W V (x - mean)``."""
    if x.n_channels != w.w.shape[1]:
        raise ValueError(
            f"unmixing matrix expects {w.w.shape[1]} channels, record has {x.n_channels}"
        )
    u = w.w @ w.whitener.apply(x.data)
    return MultiChannelRecord(x.sample_rate_hz, tuple(f"u{i}" for i in range(len(u))), u)


# -- evaluation ---------------------------------------------------------------


def amari_index(g: np.ndarray) -> float:
    """Amari performance index of ``G = W V A``, normalized to [0, 1].

    Rows of ``|G|`` are first scaled to a unit maximum. That removes the
    scale ambiguity of the estimated sources, so the index is invariant under
    ``P D G`` for any permutation ``P`` and nonsingular diagonal ``D``. Zero
    exactly when ``g`` is a scaled permutation matrix.
    """
    p = np.abs(np.asarray(g, dtype=np.float64))
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError("amari_index needs a square matrix")
    n = p.shape[0]
    if np.any(p.max(axis=1) == 0) or np.any(p.max(axis=0) == 0):
        raise ValueError("matrix has an all-zero row or column")
    if n == 1:
        return 0.0
    p = p / p.max(axis=1, keepdims=True)
    rows = (p.sum(axis=1) / p.max(axis=1) - 1.0).sum()
    cols = (p.sum(axis=0) / p.max(axis=0) - 1.0).sum()
    return float((rows + cols) / (2 * n * (n - 1)))


def match_sources(u: MultiChannelRecord, s_ref: SourceSet) -> list[tuple[int, int, float]]:
    """Greedy pairing of estimates with references by largest ``|correlation|``.

    Returns ``(estimated_index, reference_index, signed_correlation)`` tuples
    ordered by reference index.
    """
    if u.n_samples != s_ref.n_samples:
        raise ValueError(f"length mismatch: {u.n_samples} vs {s_ref.n_samples}")
    if u.n_channels != s_ref.n_channels:
        raise ValueError(f"channel mismatch: {u.n_channels} vs {s_ref.n_channels}")
    n = u.n_channels
    corr = np.corrcoef(u.data, s_ref.data)[:n, n:]
    corr = np.nan_to_num(corr)
    free = np.abs(corr)
    pairs = []
    for _ in range(n):
        i, j = np.unravel_index(int(np.argmax(free)), free.shape)
        pairs.append((int(i), int(j), float(np.clip(corr[i, j], -1.0, 1.0))))
        free[i, :] = -1.0
        free[:, j] = -1.0
    return sorted(pairs, key=lambda p: p[1])
