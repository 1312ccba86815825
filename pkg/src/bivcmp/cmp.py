"""Conway-Maxwell-Poisson distribution in the (centering, shape) parameterization.

The unnormalized kernel is ``q(y | mu, nu) = (mu**y / y!)**nu`` and the
normalizing constant ``Z(mu, nu)`` is the (intractable) sum of ``q`` over
all counts.  Exact draws are obtained by rejection from one of two
envelopes, without ever evaluating ``Z``:

* ``nu >= 1``: a Poisson(mu) proposal;
* ``nu < 1``: a geometric proposal on ``{0, 1, ...}``.

Both envelopes are expressed as *normalized* pmfs ``g`` together with a
bound ``B`` satisfying ``q(y) <= B * g(y)`` for every ``y``.  The acceptance
probability of one attempt is therefore ``Z / (B * Z_g)`` with ``Z_g = 1``;
``Z_g`` is still carried in :class:`RejectionStats` so the likelihood
estimator is written against the general identity.

Everything is computed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "CmpParams",
    "RejectionStats",
    "SamplerStallError",
    "NonConvergenceError",
    "log_kernel",
    "log_normalizing_constant",
    "pmf_oracle",
    "approx_mean",
    "approx_variance",
    "envelope",
    "sample",
    "sample_many",
    "count_attempts",
]

MAX_ATTEMPTS = 10_000_000
SERIES_CAP = 1_000_000
POISSON_ENVELOPE = "poisson_envelope"
GEOMETRIC_ENVELOPE = "geometric_envelope"


class SamplerStallError(RuntimeError):
    """Raised when a rejection loop exceeds its attempt cap."""


class NonConvergenceError(RuntimeError):
    """Raised when the truncated series hits its hard cap."""


@dataclass(frozen=True)
class CmpParams:
    mu: float
    nu: float

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive and finite, got {self.mu}")
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ValueError(f"nu must be positive and finite, got {self.nu}")


@dataclass(frozen=True)
class RejectionStats:
    """Bookkeeping from one rejection run.

    ``draws_attempted`` counts every proposal including the accepted ones,
    so ``draws_attempted >= acceptances``.
    """

    draws_attempted: int
    acceptances: int
    envelope_log_bound: float
    envelope_log_norm: float
    envelope_kind: str


def _check(mu, nu):
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(~(mu > 0)) or np.any(~np.isfinite(mu)):
        raise ValueError("mu must be positive and finite")
    if np.any(~(nu >= 0)) or np.any(~np.isfinite(nu)):
        raise ValueError("nu must be nonnegative and finite")
    return mu, nu


def log_kernel(y, mu, nu):
    """``nu * (y log mu - log y!)``; broadcasts over array arguments."""
    mu, nu = _check(mu, nu)
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("counts must be nonnegative")
    out = nu * (y * np.log(mu) - gammaln(y + 1.0))
    return out[()] if out.ndim == 0 else out


def log_normalizing_constant(mu: float, nu: float, rel_tol: float = 1e-12) -> float:
    """Log of ``Z(mu, nu)`` by truncated summation from ``y = 0``.

    Terms are generated in chunks and summed once the stopping point is
    known: the first ``y`` past ``floor(mu)`` whose log-term falls below
    ``log(rel_tol)`` plus the log of the running sum.
    """
    if not 0 < rel_tol < 1:
        raise ValueError("rel_tol must lie in (0, 1)")
    if not (mu > 0 and nu > 0):
        raise ValueError("log_normalizing_constant needs mu > 0 and nu > 0")
    mode = math.floor(mu)
    log_tol = math.log(rel_tol)
    log_mu = math.log(mu)
    chunk = max(256, 2 * mode + 64)
    start = 0
    pieces = []
    running = -np.inf
    while start <= SERIES_CAP:
        stop = min(start + chunk, SERIES_CAP + 1)
        y = np.arange(start, stop, dtype=float)
        terms = nu * (y * log_mu - gammaln(y + 1.0))
        cum = np.logaddexp(running, np.logaddexp.accumulate(terms))
        # cum[k] is the running sum including term k; the criterion compares
        # term k against the sum before it
        before = np.concatenate(([running], cum[:-1]))
        done = (y > mode) & (terms < log_tol + before)
        if done.any():
            k = int(np.argmax(done))
            pieces.append(terms[: k + 1])
            return float(logsumexp(np.concatenate(pieces)))
        pieces.append(terms)
        running = cum[-1]
        start = stop
        chunk *= 2
    raise NonConvergenceError(f"series for Z({mu}, {nu}) did not converge by y={SERIES_CAP}")


def pmf_oracle(y, mu: float, nu: float, rel_tol: float = 1e-12):
    """Normalized pmf from the kernel and the truncated-series constant."""
    return np.exp(log_kernel(y, mu, nu) - log_normalizing_constant(mu, nu, rel_tol))


def approx_mean(mu, nu):
    mu, nu = _check(mu, nu)
    return mu + 1.0 / (2.0 * nu) - 0.5


def approx_variance(mu, nu):
    mu, nu = _check(mu, nu)
    return mu / nu


# ---------------------------------------------------------------------------
# envelopes


def _geometric_p(mu, nu):
    return 2.0 * nu / (2.0 * mu * nu + 1.0 + nu)


def _log_bound_poisson(mu, nu):
    m = np.floor(mu)
    return mu + (nu - 1.0) * (m * np.log(mu) - gammaln(m + 1.0))


def _log_h_geometric(y, mu, nu, p):
    # log of q(y) / (p (1-p)^y)
    return nu * (y * np.log(mu) - gammaln(y + 1.0)) - np.log(p) - y * np.log1p(-p)


def _log_bound_geometric(mu, nu, p):
    # h is log-concave with increments (mu/(y+1))^nu / (1-p); its maximiser is
    # floor(mu * (1-p)^(-1/nu)).  Neighbours are checked against rounding.
    t = np.floor(mu * np.exp(-np.log1p(-p) / nu))
    cands = np.stack([np.maximum(t - 1.0, 0.0), t, t + 1.0])
    return np.max(_log_h_geometric(cands, mu, nu, p), axis=0)


def envelope(mu, nu):
    """Envelope constants for arrays of parameters.

    Returns ``(is_poisson, log_bound, geometric_p)``; ``geometric_p`` is NaN
    where the Poisson envelope is used.
    """
    mu, nu = np.broadcast_arrays(*_check(mu, nu))
    if np.any(nu <= 0):
        raise ValueError("sampling requires nu > 0")
    is_pois = nu >= 1.0
    log_b = np.empty(mu.shape)
    p = np.full(mu.shape, np.nan)
    log_b[is_pois] = _log_bound_poisson(mu[is_pois], nu[is_pois])
    g = ~is_pois
    p[g] = _geometric_p(mu[g], nu[g])
    log_b[g] = _log_bound_geometric(mu[g], nu[g], p[g])
    return is_pois, log_b, p


def _log_accept_poisson(y, mu, nu):
    # log q(y) - log B - log g(y) for the Poisson(mu) envelope
    m = np.floor(mu)
    lm = np.log(mu)
    return (nu - 1.0) * ((y - m) * lm - gammaln(y + 1.0) + gammaln(m + 1.0))


def _log_accept_geometric(y, mu, nu, p, log_b):
    return _log_h_geometric(y, mu, nu, p) - log_b


# ---------------------------------------------------------------------------
# vectorized rejection


def _propose(is_pois, mu, p, rng, m):
    shape = (mu.shape[0], m)
    if is_pois:
        return rng.poisson(mu[:, None], size=shape).astype(float)
    return rng.geometric(p[:, None], size=shape).astype(float) - 1.0


def _draw_group(mu, nu, p, log_b, is_pois, rng):
    """Exact draws for parameter rows sharing one envelope family.

    Each pass proposes a block of ``m`` candidates per unfinished row and
    keeps the first accepted one; columns are consumed in order, so the
    result is identical in law to a one-at-a-time loop.
    """
    n = mu.shape[0]
    out = np.empty(n)
    attempts = np.zeros(n, dtype=np.int64)
    todo = np.arange(n)
    m = 2
    while todo.size:
        mu_t, nu_t = mu[todo], nu[todo]
        y = _propose(is_pois, mu_t, p[todo] if not is_pois else None, rng, m)
        if is_pois:
            la = _log_accept_poisson(y, mu_t[:, None], nu_t[:, None])
        else:
            la = _log_accept_geometric(y, mu_t[:, None], nu_t[:, None],
                                       p[todo][:, None], log_b[todo][:, None])
        acc = np.log(rng.random(y.shape)) <= la
        hit = acc.any(axis=1)
        first = np.argmax(acc, axis=1)
        rows = todo[hit]
        out[rows] = y[hit, first[hit]]
        attempts[rows] += first[hit] + 1
        attempts[todo[~hit]] += m
        todo = todo[~hit]
        if todo.size and attempts[todo].max() > MAX_ATTEMPTS:
            raise SamplerStallError(
                f"rejection sampler exceeded {MAX_ATTEMPTS} attempts "
                f"(mu={mu[todo][0]:.4g}, nu={nu[todo][0]:.4g})")
        m = min(4 * m, 4096)
    return out, attempts


def sample_many(mu, nu, rng: np.random.Generator, return_attempts: bool = False):
    """Exact CMP draws, one per element of the broadcast ``(mu, nu)``."""
    mu, nu = np.broadcast_arrays(*_check(mu, nu))
    shape = mu.shape
    mu = mu.ravel().astype(float)
    nu = nu.ravel().astype(float)
    is_pois, log_b, p = envelope(mu, nu)
    out = np.empty(mu.shape)
    att = np.empty(mu.shape, dtype=np.int64)
    for flag in (True, False):
        idx = np.flatnonzero(is_pois == flag)
        if idx.size:
            out[idx], att[idx] = _draw_group(mu[idx], nu[idx], p[idx], log_b[idx], flag, rng)
    out = out.astype(np.int64).reshape(shape)
    if return_attempts:
        return out, att.reshape(shape)
    return out


def sample(params: CmpParams, rng: np.random.Generator) -> tuple[int, RejectionStats]:
    """One exact draw together with its rejection statistics."""
    y, att = sample_many(params.mu, params.nu, rng, return_attempts=True)
    is_pois, log_b, _ = envelope(params.mu, params.nu)
    stats = RejectionStats(
        draws_attempted=int(att),
        acceptances=1,
        envelope_log_bound=float(log_b),
        envelope_log_norm=0.0,
        envelope_kind=POISSON_ENVELOPE if bool(is_pois) else GEOMETRIC_ENVELOPE,
    )
    return int(y), stats


def count_attempts(mu, nu, r: int, rng: np.random.Generator):
    """Number of proposals needed to collect ``r`` acceptances, per element.

    Only the accept/reject outcomes matter here, so proposals are generated
    in blocks per row and the position of the ``r``-th acceptance located on
    the cumulative count.  Returns ``(attempts, log_bound, log_norm)``.
    """
    if r < 1:
        raise ValueError("r must be at least 1")
    mu, nu = np.broadcast_arrays(*_check(mu, nu))
    shape = mu.shape
    mu = mu.ravel().astype(float)
    nu = nu.ravel().astype(float)
    is_pois, log_b, p = envelope(mu, nu)
    total = np.zeros(mu.shape, dtype=np.int64)
    for flag in (True, False):
        idx = np.flatnonzero(is_pois == flag)
        block = max(64, 2 * r)
        step = max(1, 4_000_000 // block)
        for s in range(0, idx.size, step):
            rows = idx[s:s + step]
            need = np.full(rows.size, r, dtype=np.int64)
            todo = np.arange(rows.size)
            blk = block
            while todo.size:
                rr = rows[todo]
                y = _propose(flag, mu[rr], p[rr], rng, blk)
                if flag:
                    la = _log_accept_poisson(y, mu[rr, None], nu[rr, None])
                else:
                    la = _log_accept_geometric(y, mu[rr, None], nu[rr, None],
                                               p[rr, None], log_b[rr, None])
                acc = np.log(rng.random(y.shape)) <= la
                csum = np.cumsum(acc, axis=1, dtype=np.int64)
                got = csum[:, -1]
                fin = got >= need[todo]
                pos = np.argmax(csum[fin] >= need[todo][fin, None], axis=1)
                total[rr[fin]] += pos + 1
                total[rr[~fin]] += blk
                need[todo[~fin]] -= got[~fin]
                todo = todo[~fin]
                if todo.size:
                    if total[rows[todo]].max() > MAX_ATTEMPTS * r:
                        raise SamplerStallError("attempt counting exceeded its cap")
                    rate = max(got[~fin].sum() / (blk * todo.size), 1e-3)
                    blk = int(min(max(64, 1.5 * need[todo].max() / rate), 50 * block))
    return total.reshape(shape), log_b.reshape(shape), np.zeros(shape)
