# Copyright (c) 2026 vrutrack authors.
# Use of this source code is governed by a MIT License
# license that can be found in the LICENSE file.

"""
Interacting Multiple Model filter over {static, constant velocity, constant
acceleration} motion models.

Every operation is a pure function from an `ImmState` to a new `ImmState`.
States may carry leading batch dimensions (one entry per track), in which
case all arrays broadcast over them; the tracker filters all of its tracks
in one call this way.

Models of unequal dimension interact in the common 4D space [x, y, vx, vy]:
the static model contributes zero velocity (with `unmodeled_sigma`
uncertainty), the constant acceleration model keeps its acceleration
conditioned on the mixed 4D state.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from vrutrack import protocol
from vrutrack.core import StateEstimate

_LOG_2PI = math.log(2.0 * math.pi)
_ORDERS = {protocol.static: 1, protocol.cv: 2, protocol.ca: 3}


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class MotionModel:
    """
    Linear motion model driven by white noise on its highest derivative.

    `kind`
      static (random-walk position), cv (white-noise acceleration) or
      ca (white-noise jerk)

    `noise`
      process noise intensity q of the driving white noise

    `unmodeled_sigma`
      standard deviation given to the velocity components a model does not
      carry (static only) when it is embedded in the common 4D space
    """

    kind: str
    noise: float
    unmodeled_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in _ORDERS:
            raise ValueError(f"unknown motion model {self.kind!r}")
        if self.noise < 0:
            raise ValueError("process noise intensity must be non-negative")

    @property
    def order(self):
        return _ORDERS[self.kind]

    @property
    def dim(self):
        return 2 * self.order

    @cached_property
    def _transition_terms(self):
        # State layout interleaves axes: index of derivative k on axis a is 2k + a.
        terms = {}
        for i in range(self.order):
            for j in range(i, self.order):
                power = j - i
                matrix = terms.setdefault(power, np.zeros((self.dim, self.dim)))
                for axis in (0, 1):
                    matrix[2 * i + axis, 2 * j + axis] = 1.0 / math.factorial(power)
        return tuple(terms.items())

    @cached_property
    def _noise_terms(self):
        n = self.order
        terms = {}
        for i in range(n):
            for j in range(n):
                power = 2 * n - 1 - i - j
                matrix = terms.setdefault(power, np.zeros((self.dim, self.dim)))
                coef = 1.0 / (
                    power * math.factorial(n - 1 - i) * math.factorial(n - 1 - j)
                )
                for axis in (0, 1):
                    matrix[2 * i + axis, 2 * j + axis] = coef
        return tuple(terms.items())

    def transition(self, dt):
        dt = np.asarray(dt, dtype=float)[..., None, None]
        return sum(dt**power * matrix for power, matrix in self._transition_terms)

    def process_noise(self, dt):
        dt = np.asarray(dt, dtype=float)[..., None, None]
        return self.noise * sum(dt**power * matrix for power, matrix in self._noise_terms)

    @cached_property
    def embedding(self):
        """(4, dim) selection of [x, y, vx, vy] from the model state."""
        matrix = np.zeros((4, self.dim))
        for k in range(min(4, self.dim)):
            matrix[k, k] = 1.0
        return matrix

    @cached_property
    def padding(self):
        """Covariance added to the embedded 4D state for components the model lacks."""
        pad = np.zeros((4, 4))
        for k in range(self.dim, 4):
            pad[k, k] = self.unmodeled_sigma**2
        return pad

    def embed(self, mean, cov):
        e = self.embedding
        return mean @ e.T, e @ cov @ e.T + self.padding


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Measurement of position (2D) or position and velocity (4D).

    `R` is the (diagonal) measurement covariance.
    """

    z: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        R = np.asarray(self.R, dtype=float)
        if z.shape[-1] not in (2, 4):
            raise ValueError(f"observation dimension must be 2 or 4, got {z.shape[-1]}")
        if R.shape[-2:] != (z.shape[-1], z.shape[-1]):
            raise ValueError(f"measurement covariance shape {R.shape} does not match z")
        if not np.all(np.diagonal(R, axis1=-2, axis2=-1) > 0):
            raise ValueError("measurement covariance diagonal must be positive")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "R", R)

    @property
    def dim(self):
        return self.z.shape[-1]

    @classmethod
    def position(cls, x, y, sigma):
        sigma = np.asarray(sigma, dtype=float)
        z = np.stack(np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float)), -1)
        return cls(z, _diag(np.broadcast_to(sigma[..., None], z.shape) ** 2))

    @classmethod
    def state(cls, mean, sigma):
        """4D observation from a learned state and its standard deviations."""
        mean = np.asarray(mean, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        return cls(mean, _diag(sigma**2))


@dataclass(frozen=True, eq=False)
class ImmState:
    """
    Per-model means/covariances, model probabilities `mu` and the Markov
    transition matrix (row-stochastic, `transition[i, j]` = P(i -> j)).
    """

    models: tuple
    means: tuple
    covs: tuple
    mu: np.ndarray
    transition: np.ndarray

    @property
    def batch_shape(self):
        return self.mu.shape[:-1]

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched ImmState has no length")
        return self.batch_shape[0]

    def __getitem__(self, index):
        return ImmState(
            self.models,
            tuple(m[index] for m in self.means),
            tuple(c[index] for c in self.covs),
            self.mu[index],
            self.transition,
        )

    @classmethod
    def stack(cls, states):
        first = states[0]
        return cls(
            first.models,
            tuple(np.stack([s.means[j] for s in states]) for j in range(len(first.models))),
            tuple(np.stack([s.covs[j] for s in states]) for j in range(len(first.models))),
            np.stack([s.mu for s in states]),
            first.transition,
        )

    def embedded(self):
        """Model states in the common 4D space, shaped (..., M, 4) and (..., M, 4, 4)."""
        pairs = [m.embed(mean, cov) for m, mean, cov in zip(self.models, self.means, self.covs)]
        return (
            np.stack([p[0] for p in pairs], axis=-2),
            np.stack([p[1] for p in pairs], axis=-3),
        )

    @cached_property
    def fused(self):
        """Probability-weighted moment match of all models, as (mean, cov) in 4D."""
        m4, p4 = self.embedded()
        mean = np.einsum("...j,...jk->...k", self.mu, m4)
        diff = m4 - mean[..., None, :]
        cov = np.einsum("...j,...jkl->...kl", self.mu, p4) + np.einsum(
            "...j,...jk,...jl->...kl", self.mu, diff, diff
        )
        return mean, _symmetrize(cov)

    @property
    def estimate(self):
        if self.batch_shape:
            raise TypeError("use estimates() on a batched ImmState")
        return StateEstimate.from_moments(*self.fused)

    def estimates(self):
        mean, cov = self.fused
        return [StateEstimate.from_moments(m, c) for m, c in zip(mean, cov)]


@dataclass
class ImmConfig:
    """
    Filter parameters. Noise intensities are in m^2/s^3 (cv), m^2/s^5 (ca)
    and m^2/s (static).
    """

    models: tuple = protocol.motion_models
    static_noise: float = 0.002
    cv_noise: float = 0.5
    ca_noise: float = 1.0
    self_transition: float = 0.98
    static_velocity_sigma: float = 0.1
    initial_velocity_sigma: dict = field(
        default_factory=lambda: dict(protocol.initial_velocity_sigma)
    )
    initial_acceleration_sigma: float = 1.0
    measurement_sigma: dict = field(
        default_factory=lambda: dict(protocol.measurement_sigma)
    )

    def __post_init__(self):
        self.models = tuple(self.models)
        if not self.models:
            raise ValueError("at least one motion model is required")
        for kind in self.models:
            if kind not in _ORDERS:
                raise ValueError(f"unknown motion model {kind!r}")
        if not 0.0 < self.self_transition <= 1.0:
            raise ValueError("self_transition must be in (0, 1]")
        if len(self.models) > 1 and self.self_transition == 1.0:
            raise ValueError("self_transition must be < 1 with several models")
        for name, sigma in self.measurement_sigma.items():
            if sigma <= 0:
                raise ValueError(f"measurement sigma for {name} must be positive")

    def motion_models(self):
        noise = {
            protocol.static: self.static_noise,
            protocol.cv: self.cv_noise,
            protocol.ca: self.ca_noise,
        }
        return tuple(
            MotionModel(kind, noise[kind], self.static_velocity_sigma if kind == protocol.static else 0.0)
            for kind in self.models
        )

    def transition_matrix(self):
        n = len(self.models)
        if n == 1:
            return np.ones((1, 1))
        off = (1.0 - self.self_transition) / (n - 1)
        matrix = np.full((n, n), off)
        np.fill_diagonal(matrix, self.self_transition)
        return matrix

    def measurement_noise(self, sensor):
        return self.measurement_sigma[sensor]

    def initial_state(self, x, y, category, sensor, models=None):
        """Birth state: position from the detection, zero velocity."""
        models = models or self.motion_models()
        pos_var = self.measurement_sigma[sensor] ** 2
        vel_var = self.initial_velocity_sigma[category] ** 2
        acc_var = self.initial_acceleration_sigma**2
        variances = (pos_var, pos_var, vel_var, vel_var, acc_var, acc_var)
        means, covs = [], []
        for model in models:
            mean = np.zeros(model.dim)
            mean[0], mean[1] = x, y
            means.append(mean)
            covs.append(np.diag(variances[: model.dim]))
        n = len(models)
        return ImmState(
            tuple(models),
            tuple(means),
            tuple(covs),
            np.full(n, 1.0 / n),
            self.transition_matrix(),
        )


def _diag(values):
    values = np.asarray(values, dtype=float)
    out = np.zeros(values.shape + (values.shape[-1],))
    idx = np.arange(values.shape[-1])
    out[..., idx, idx] = values
    return out


def _symmetrize(cov):
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def _check_psd(cov, what):
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{what} covariance is not positive definite") from exc


def _restrict(model, mean4, cov4, own_mean, own_cov):
    """Maps a mixed 4D state back into `model`'s own state space."""
    if model.dim == 2:
        return mean4[..., :2], cov4[..., :2, :2]
    if model.dim == 4:
        return mean4, cov4
    # Higher derivatives follow their own conditional distribution given [x, y, vx, vy].
    p_ss = own_cov[..., :4, :4]
    p_as = own_cov[..., 4:, :4]
    p_aa = own_cov[..., 4:, 4:]
    gain = np.swapaxes(np.linalg.solve(p_ss, np.swapaxes(p_as, -1, -2)), -1, -2)
    gain_t = np.swapaxes(gain, -1, -2)
    cond_cov = p_aa - gain @ np.swapaxes(p_as, -1, -2)
    acc = own_mean[..., 4:] + np.einsum("...ij,...j->...i", gain, mean4 - own_mean[..., :4])
    cross = gain @ cov4
    mean = np.concatenate([mean4, acc], axis=-1)
    cov = np.concatenate(
        [
            np.concatenate([cov4, np.swapaxes(cross, -1, -2)], axis=-1),
            np.concatenate([cross, cond_cov + cross @ gain_t], axis=-1),
        ],
        axis=-2,
    )
    return mean, _symmetrize(cov)


def imm_predict(state, dt):
    """
    Mixes the model states (IMM interaction) and propagates each model by
    `dt` seconds. `dt` broadcasts over the batch shape.
    Entries with `dt == 0` are returned unchanged.
    """
    dt = np.asarray(dt, dtype=float)
    if not np.all(np.isfinite(dt)) or np.any(dt < 0):
        raise ValueError(f"prediction interval must be finite and non-negative, got {dt}")
    dt = np.broadcast_to(dt, state.batch_shape)

    mu, transition = state.mu, state.transition
    predicted_mu = mu @ transition
    if np.any(predicted_mu <= 0):
        raise NumericalError("model probability collapsed to zero")

    means, covs = [], []
    if len(state.models) == 1:
        mixed = [(state.means[0], state.covs[0])]
    else:
        weights = mu[..., :, None] * transition / predicted_mu[..., None, :]
        m4, p4 = state.embedded()
        mixed_mean = np.einsum("...ij,...ik->...jk", weights, m4)
        diff = m4[..., :, None, :] - mixed_mean[..., None, :, :]
        mixed_cov = np.einsum("...ij,...ikl->...jkl", weights, p4) + np.einsum(
            "...ij,...ijk,...ijl->...jkl", weights, diff, diff
        )
        mixed = [
            _restrict(model, mixed_mean[..., j, :], mixed_cov[..., j, :, :], state.means[j], state.covs[j])
            for j, model in enumerate(state.models)
        ]

    for model, (mean, cov) in zip(state.models, mixed):
        F = model.transition(dt)
        mean = np.einsum("...ij,...j->...i", F, mean)
        cov = _symmetrize(F @ cov @ np.swapaxes(F, -1, -2) + model.process_noise(dt))
        _check_psd(cov, f"predicted {model.kind}")
        means.append(mean)
        covs.append(cov)

    # a zero interval is the identity on the whole state
    held = dt == 0
    if np.any(held):
        means = [np.where(held[..., None], old, new) for old, new in zip(state.means, means)]
        covs = [np.where(held[..., None, None], old, new) for old, new in zip(state.covs, covs)]
        predicted_mu = np.where(held[..., None], mu, predicted_mu)

    return ImmState(state.models, tuple(means), tuple(covs), predicted_mu, transition)


def imm_update(state, obs):
    """
    Kalman update of every model with `obs`, then re-weighting of the model
    probabilities by the measurement likelihoods.
    """
    k = obs.dim
    h4 = np.eye(4)[:k]
    log_likelihoods, means, covs = [], [], []
    for model, mean, cov in zip(state.models, state.means, state.covs):
        H = h4 @ model.embedding
        r_eff = obs.R + h4 @ model.padding @ h4.T
        innovation = obs.z - mean @ H.T
        S = _symmetrize(H @ cov @ H.T + r_eff)
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular innovation covariance ({model.kind})") from exc
        pht = cov @ H.T
        gain = np.swapaxes(np.linalg.solve(S, np.swapaxes(pht, -1, -2)), -1, -2)
        mean = mean + np.einsum("...ij,...j->...i", gain, innovation)
        ikh = np.eye(model.dim) - gain @ H
        cov = _symmetrize(
            ikh @ cov @ np.swapaxes(ikh, -1, -2) + gain @ r_eff @ np.swapaxes(gain, -1, -2)
        )
        _check_psd(cov, f"updated {model.kind}")
        whitened = np.einsum("...i,...i->...", innovation, np.linalg.solve(S, innovation[..., None])[..., 0])
        log_det = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        log_likelihoods.append(-0.5 * (whitened + log_det + k * _LOG_2PI))
        means.append(mean)
        covs.append(cov)

    with np.errstate(divide="ignore"):
        log_mu = np.log(state.mu) + np.stack(log_likelihoods, axis=-1)
    norm = logsumexp(log_mu, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalError("model likelihoods underflowed for every model")
    mu = np.exp(log_mu - norm)
    mu = mu / mu.sum(axis=-1, keepdims=True)
    return ImmState(state.models, tuple(means), tuple(covs), mu, state.transition)


def whitened_distance(mean, cov, z, R):
    """
    Norm of the innovation `z - H mean` whitened by `H cov H^T + R`.
    Broadcasts over leading dimensions.
    """
    k = z.shape[-1]
    innovation = z - mean[..., :k]
    S = cov[..., :k, :k] + R
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular innovation covariance") from exc
    solved = np.linalg.solve(S, innovation[..., None])[..., 0]
    return np.sqrt(np.maximum(np.einsum("...i,...i->...", innovation, solved), 0.0))


def mahalanobis_distance(state, obs):
    mean, cov = state.fused
    return whitened_distance(mean, cov, obs.z, obs.R)


def ballistic_rollout(state, dt):
    """Prediction without update, used for tracks that were not observed."""
    if np.any(np.asarray(dt) <= 0):
        raise ValueError(f"rollout interval must be positive, got {dt}")
    return imm_predict(state, dt)
