"""Denoising-diffusion machinery on plain arrays.

Schedules store the cumulative signal coefficient abar_t with abar_0 = 1,
so the forward marginal is x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps and
the per-step coefficient is a_t = abar_t / abar_{t-1}. All denoisers here
are analytic: for Gaussian-mixture data the posterior mean E[x0 | x_t] has
a closed form, which gives an exact noise predictor to drive the samplers
and the edit-friendly inversion without any trained network.

The inversion stores one noise vector per step. Steps T..2 store the usual
scaled residual; step 1 has zero posterior variance, so its entry is the
raw residual x0 - mu_1 and is applied unscaled on replay - this is what
makes reconstruction exact rather than approximate.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.special import logsumexp

from . import rasters
from .errors import (
    DegenerateVarianceError,
    InvalidParamsError,
    MalformedHeaderError,
    ScheduleMismatchError,
    ShapeMismatchError,
    StepOutOfRangeError,
    WeightSumViolationError,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal coefficients abar_0..abar_T, abar_0 = 1."""

    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise InvalidParamsError("schedule needs abar_0..abar_T with T >= 1")
        if ab[0] != 1.0:
            raise InvalidParamsError("abar_0 must be 1")
        if not np.all(np.diff(ab) < 0.0):
            raise InvalidParamsError("abar must be strictly decreasing")
        if ab[-1] <= 0.0:
            raise InvalidParamsError("abar_T must stay positive")

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    @property
    def schedule_id(self) -> str:
        payload = struct.pack("<I", self.T) + self.alpha_bar.tobytes()
        return hashlib.sha256(payload).hexdigest()[:16]


def make_schedule(T: int, kind: str = "linear-beta", *, beta_start: float = 1e-4,
                  beta_end: float = 0.02, cosine_offset: float = 0.008
                  ) -> NoiseSchedule:
    """Build a schedule from per-step betas (linear) or the cosine law."""
    if T < 1:
        raise InvalidParamsError("T must be >= 1")
    if kind == "linear-beta":
        betas = np.linspace(beta_start, beta_end, T)
        if betas.min() <= 0.0 or betas.max() >= 1.0:
            raise InvalidParamsError("betas must lie in (0, 1)")
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return NoiseSchedule(alpha_bar)
    if kind == "cosine":
        s = cosine_offset
        if s <= 0.0:
            raise InvalidParamsError("cosine offset must be positive")
        t = np.arange(T + 1, dtype=np.float64)
        f = np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2
        alpha_bar = f / f[0]
        betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-12, 0.999)
        alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return NoiseSchedule(alpha_bar)
    raise InvalidParamsError(f"unknown schedule kind '{kind}'")


def _check_step(t: int, schedule: NoiseSchedule, low: int) -> None:
    if not (low <= t <= schedule.T):
        raise StepOutOfRangeError(
            f"step {t} outside [{low}, {schedule.T}]")


def forward_sample(x0: np.ndarray, t: int, schedule: NoiseSchedule,
                   noise: np.ndarray) -> np.ndarray:
    """Closed-form forward marginal sample at step t."""
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if x0.shape != noise.shape:
        raise ShapeMismatchError(f"x0 {x0.shape} vs noise {noise.shape}")
    _check_step(t, schedule, 0)
    ab = schedule.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * noise


class Denoiser(Protocol):
    def predict(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        """Predict the noise component of x_t at step t."""
        ...


def denoising_loss(denoiser: Denoiser, x0: np.ndarray, t: int,
                   noise: np.ndarray, schedule: NoiseSchedule,
                   condition=None) -> float:
    """Squared L2 between the denoiser's prediction and the injected noise."""
    x_t = forward_sample(x0, t, schedule, noise)
    eps_hat = np.asarray(denoiser.predict(x_t, t, condition), dtype=np.float64)
    if eps_hat.shape != np.asarray(noise).shape:
        raise ShapeMismatchError(
            f"prediction {eps_hat.shape} vs noise {np.asarray(noise).shape}")
    return float(np.sum((eps_hat - np.asarray(noise, dtype=np.float64)) ** 2))


# --------------------------------------------------------------------------
# analytic Gaussian-mixture denoiser
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianMixtureModel:
    """Isotropic mixture: components are (weight, mean vector, variance)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        m = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if m.ndim != 2 or w.shape != (m.shape[0],) or v.shape != (m.shape[0],):
            raise InvalidParamsError("mixture fields must be (K,), (K,dim), (K,)")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidParamsError("weights must be positive and sum to 1")
        if np.any(v <= 0.0):
            raise DegenerateVarianceError("component variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        eps = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.sqrt(self.variances[comp])[:, None] * eps


def gmm_posterior_mean(gmm: GaussianMixtureModel, x_t: np.ndarray,
                       alpha_bar: float) -> np.ndarray:
    """E[x0 | x_t] under the mixture prior and the forward marginal.

    Broadcasts over any leading axes of x_t; the trailing axis is the
    state dimension.
    """
    x = np.asarray(x_t, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise ShapeMismatchError(
            f"state dim {x.shape[-1]} vs mixture dim {gmm.dim}")
    sqrt_ab = math.sqrt(alpha_bar)
    # marginal of x_t given component k: N(sqrt_ab mu_k, ab s_k^2 + 1 - ab)
    var_t = alpha_bar * gmm.variances + (1.0 - alpha_bar)        # (K,)
    diff = x[..., None, :] - sqrt_ab * gmm.means                 # (..., K, dim)
    sq = np.sum(diff * diff, axis=-1)                            # (..., K)
    log_resp = (np.log(gmm.weights) - 0.5 * sq / var_t
                - 0.5 * gmm.dim * np.log(var_t))
    log_resp = log_resp - logsumexp(log_resp, axis=-1, keepdims=True)
    resp = np.exp(log_resp)                                      # (..., K)

    gain = sqrt_ab * gmm.variances / var_t                       # (K,)
    post = gmm.means + gain[:, None] * diff                      # (..., K, dim)
    return np.sum(resp[..., None] * post, axis=-2)


@dataclass(frozen=True)
class GmmDenoiser:
    """Exact noise predictor for Gaussian-mixture data.

    The optional condition must provide a ``mean_offset(x_shape)`` array;
    the mixture is then treated as shifted by that offset, which is how
    the desk-scale conditioned paths (depth, semantics) are realized.
    """

    gmm: GaussianMixtureModel
    schedule: NoiseSchedule

    def predict(self, x_t: np.ndarray, t: int, condition=None) -> np.ndarray:
        _check_step(t, self.schedule, 0)
        ab = float(self.schedule.alpha_bar[t])
        if 1.0 - ab == 0.0:
            raise DegenerateVarianceError(
                "noise prediction undefined at t=0 (1 - abar = 0)")
        x = np.asarray(x_t, dtype=np.float64)
        offset = 0.0
        if condition is not None:
            offset = np.asarray(condition.mean_offset(x.shape), dtype=np.float64)
        e_x0 = offset + gmm_posterior_mean(self.gmm, x - math.sqrt(ab) * offset, ab)
        return (x - math.sqrt(ab) * e_x0) / math.sqrt(1.0 - ab)


def analytic_denoiser(gmm: GaussianMixtureModel,
                      schedule: NoiseSchedule) -> GmmDenoiser:
    return GmmDenoiser(gmm, schedule)


# --------------------------------------------------------------------------
# reverse process and edit-friendly inversion
# --------------------------------------------------------------------------

def _step_coefficients(t: int, schedule: NoiseSchedule) -> tuple[float, float, float]:
    """(a_t, mu noise coefficient, sigma_t) of the ancestral update."""
    ab_t = float(schedule.alpha_bar[t])
    ab_prev = float(schedule.alpha_bar[t - 1])
    a_t = ab_t / ab_prev
    coeff = (1.0 - a_t) / math.sqrt(1.0 - ab_t)
    if t == 1:
        sigma = 0.0
    else:
        sigma = math.sqrt((1.0 - a_t) * (1.0 - ab_prev) / (1.0 - ab_t))
    return a_t, coeff, sigma


def reverse_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray,
                 schedule: NoiseSchedule,
                 z: np.ndarray | None = None) -> np.ndarray:
    """One DDPM ancestral step x_t -> x_{t-1}; sigma_1 = 0 by convention."""
    _check_step(t, schedule, 1)
    x = np.asarray(x_t, dtype=np.float64)
    eps = np.asarray(eps_hat, dtype=np.float64)
    if x.shape != eps.shape:
        raise ShapeMismatchError(f"x_t {x.shape} vs eps_hat {eps.shape}")
    a_t, coeff, sigma = _step_coefficients(t, schedule)
    mu = (x - coeff * eps) / math.sqrt(a_t)
    if z is None or sigma == 0.0:
        return mu
    z = np.asarray(z, dtype=np.float64)
    if z.shape != x.shape:
        raise ShapeMismatchError(f"x_t {x.shape} vs z {z.shape}")
    return mu + sigma * z


@dataclass
class InversionRecord:
    """Terminal state plus per-step noise vectors z_T..z_1.

    z_1 is the raw (unscaled) residual of the deterministic final step.
    """

    x_terminal: np.ndarray
    noise_vectors: list[np.ndarray]
    schedule_id: str

    @property
    def T(self) -> int:
        return len(self.noise_vectors)


def edit_friendly_invert(x0: np.ndarray, denoiser: Denoiser,
                         schedule: NoiseSchedule, rng: np.random.Generator,
                         condition=None) -> InversionRecord:
    """Compute noise vectors whose replay reproduces x0 exactly.

    Each x_t is drawn independently from the forward marginal (not as one
    correlated trajectory); the stored z_t is whatever residual the
    ancestral step needs to land on the independently drawn x_{t-1}.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    T = schedule.T
    states = [x0]
    for t in range(1, T + 1):
        states.append(forward_sample(x0, t, schedule,
                                     rng.standard_normal(x0.shape)))
    zs: list[np.ndarray] = []
    for t in range(T, 1, -1):
        a_t, coeff, sigma = _step_coefficients(t, schedule)
        if sigma == 0.0:
            raise DegenerateVarianceError(
                f"sigma_{t} = 0; schedule leaves no noise to invert")
        eps = np.asarray(denoiser.predict(states[t], t, condition), np.float64)
        mu = (states[t] - coeff * eps) / math.sqrt(a_t)
        zs.append((states[t - 1] - mu) / sigma)
    # final step is deterministic; store the raw residual
    a_1, coeff, _ = _step_coefficients(1, schedule)
    eps = np.asarray(denoiser.predict(states[1], 1, condition), np.float64)
    mu_1 = (states[1] - coeff * eps) / math.sqrt(a_1)
    zs.append(x0 - mu_1)
    return InversionRecord(states[T], zs, schedule.schedule_id)


def reconstruct(record: InversionRecord, denoiser: Denoiser,
                schedule: NoiseSchedule, condition=None) -> np.ndarray:
    """Replay the reverse process with the stored noise vectors."""
    if record.schedule_id != schedule.schedule_id:
        raise ScheduleMismatchError(
            "inversion record was produced under a different schedule")
    if record.T != schedule.T:
        raise ScheduleMismatchError(
            f"record has {record.T} steps, schedule has {schedule.T}")
    x = np.asarray(record.x_terminal, dtype=np.float64)
    for i, t in enumerate(range(schedule.T, 1, -1)):
        eps = denoiser.predict(x, t, condition)
        x = reverse_step(x, t, eps, schedule, record.noise_vectors[i])
    eps = denoiser.predict(x, 1, condition)
    mu_1 = reverse_step(x, 1, eps, schedule, None)
    return mu_1 + np.asarray(record.noise_vectors[-1], dtype=np.float64)


# --------------------------------------------------------------------------
# guidance and partial refinement
# --------------------------------------------------------------------------

def cfg_combine(eps_uncond: np.ndarray, eps_sem: np.ndarray,
                eps_depth: np.ndarray, alpha: float, lambda_s: float,
                lambda_d: float) -> np.ndarray:
    """Classifier-free guidance over a semantic and a depth branch."""
    if abs(lambda_s + lambda_d - 1.0) > 1e-9:
        raise WeightSumViolationError(
            f"lambda_s + lambda_d must be 1, got {lambda_s + lambda_d!r}")
    eu = np.asarray(eps_uncond, dtype=np.float64)
    es = np.asarray(eps_sem, dtype=np.float64)
    ed = np.asarray(eps_depth, dtype=np.float64)
    if not (eu.shape == es.shape == ed.shape):
        raise ShapeMismatchError(
            f"branch shapes disagree: {eu.shape}, {es.shape}, {ed.shape}")
    return (1.0 - alpha) * eu + alpha * (lambda_s * es + lambda_d * ed)


def sdedit_refine(x: np.ndarray, strength: float, denoiser: Denoiser,
                  schedule: NoiseSchedule, rng: np.random.Generator,
                  condition=None, post_step=None) -> np.ndarray:
    """Partially noise x to step round(strength * T), then denoise to 0.

    ``post_step(x, t)`` runs after each reverse step with the new level t,
    letting callers re-impose trusted pixels during refinement.
    """
    if not 0.0 <= strength <= 1.0:
        raise InvalidParamsError("strength must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    t_star = int(round(strength * schedule.T))
    if t_star == 0:
        return x.copy()
    x_t = forward_sample(x, t_star, schedule, rng.standard_normal(x.shape))
    for t in range(t_star, 0, -1):
        eps = denoiser.predict(x_t, t, condition)
        z = rng.standard_normal(x.shape) if t > 1 else None
        x_t = reverse_step(x_t, t, eps, schedule, z)
        if post_step is not None:
            x_t = post_step(x_t, t - 1)
    return x_t


# --------------------------------------------------------------------------
# inversion-record serialization
# --------------------------------------------------------------------------

def write_inversion_record(record: InversionRecord, path: str | Path) -> None:
    """Serialize an inversion record of any state shape.

    Payload layout: uint32 ndim, uint32 dims, then (T+1) blocks of float64
    (x_T then z_T..z_1), then the 8-byte schedule digest. Double precision
    is deliberate - replay error grows by 1/sqrt(abar_T), which float32
    storage can exceed.
    """
    x = np.asarray(record.x_terminal, dtype=np.float64)
    rows = [x] + [np.asarray(z, dtype=np.float64) for z in record.noise_vectors]
    for z in rows:
        if z.shape != x.shape:
            raise ShapeMismatchError("record entries must share the state shape")
    shape = np.array((x.ndim,) + x.shape, dtype="<u4")
    payload = shape.tobytes()
    payload += np.concatenate([z.reshape(-1) for z in rows]).astype("<f8").tobytes()
    payload += bytes.fromhex(record.schedule_id)
    rasters.write_raw(path, rasters.MAGIC_INVERSION, x.size, len(rows), 1,
                      payload)


def read_inversion_record(path: str | Path) -> InversionRecord:
    magic, n, rows, channels, payload = rasters.read_raw(path)
    if magic != rasters.MAGIC_INVERSION:
        raise MalformedHeaderError(f"{path}: not an inversion record")
    if channels != 1 or rows < 2 or len(payload) < 4:
        raise MalformedHeaderError(f"{path}: inversion payload size mismatch")
    ndim = int(np.frombuffer(payload[:4], dtype="<u4")[0])
    header = 4 + 4 * ndim
    expected = header + rows * n * 8 + 8
    if len(payload) != expected:
        raise MalformedHeaderError(f"{path}: inversion payload size mismatch")
    shape = tuple(int(v) for v in
                  np.frombuffer(payload[4:header], dtype="<u4"))
    if int(np.prod(shape, dtype=np.int64)) != n:
        raise MalformedHeaderError(f"{path}: inversion shape mismatch")
    digest = payload[-8:].hex()
    data = np.frombuffer(payload[header:-8], dtype="<f8").reshape((rows,) + shape)
    return InversionRecord(data[0].copy(),
                           [data[i].copy() for i in range(1, rows)], digest)
