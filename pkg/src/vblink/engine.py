"""Mean-field coordinate ascent for the latent-entity model.

The variational family is fully factorized: one categorical factor per
record over the K entities (responsibilities ``phi``, an (N, K) array) and
one Dirichlet factor per entity and field (parameters ``lam``, a list of
(K, V_f) arrays).  A sweep alternates the two closed-form updates

    lam[k, f, v] <- alpha[f, v] + sum_n phi[n, k] * 1{x[n, f] == v}
    phi[n, k]    propto exp( sum_f  psi(lam[k, f, x[n, f]])
                                  - psi(sum_v lam[k, f, v]) )

and evaluates the evidence lower bound once per sweep.  The bound includes
the constant -N*log(K) from the uniform assignment prior, so it is a true
lower bound on the log evidence of the data.

Determinism contract: records are processed in fixed blocks of
``BLOCK_RECORDS`` and per-block partial results are combined in block index
order, so results are bit-identical for a given seed regardless of the
worker count.  During the phi sweep ``lam`` is read-only and blocks write
disjoint rows; during the lam sweep ``phi`` is read-only.

Per sweep, the digamma tables over ``lam`` are built once (O(K * sum V_f))
so the phi sweep reduces to O(N * K * F) table lookups.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .numerics import digamma, log_sum_exp, trigamma

# Fixed record-block size; part of the determinism contract above.
BLOCK_RECORDS = 8192

STATE_FORMAT_VERSION = 1


class NumericalFailureError(RuntimeError):
    """The ELBO became non-finite during a fit sweep."""

    def __init__(self, sweep, message):
        super().__init__(f"sweep {sweep}: {message}")
        self.sweep = sweep


@dataclass(eq=False)
class HyperParams:
    """Number of latent entities plus per-field Dirichlet concentrations."""

    entity_count: int
    alpha: list  # per field, a (V_f,) float array

    def __post_init__(self):
        self.entity_count = int(self.entity_count)
        if self.entity_count < 1:
            raise ValueError("entity_count must be >= 1")
        self.alpha = [np.ascontiguousarray(a, dtype=np.float64) for a in self.alpha]
        for a in self.alpha:
            if a.ndim != 1 or a.size == 0 or np.any(a <= 0.0):
                raise ValueError("alpha vectors must be 1-D and strictly positive")

    @classmethod
    def symmetric(cls, entity_count, alpha, cardinalities):
        """Broadcast one scalar concentration across every field and value."""
        return cls(
            entity_count=entity_count,
            alpha=[np.full(int(v_f), float(alpha)) for v_f in cardinalities],
        )


@dataclass(eq=False)
class VariationalState:
    """Responsibilities ``phi`` (N, K) and Dirichlet parameters ``lam``
    (per field, (K, V_f))."""

    phi: np.ndarray
    lam: list

    @property
    def entity_count(self):
        return int(self.phi.shape[1])

    def copy(self):
        return VariationalState(
            phi=self.phi.copy(), lam=[l.copy() for l in self.lam]
        )

    def permute_entities(self, perm):
        """Relabel entities: new entity ``i`` is old entity ``perm[i]``."""
        perm = np.asarray(perm)
        return VariationalState(
            phi=np.ascontiguousarray(self.phi[:, perm]),
            lam=[np.ascontiguousarray(l[perm]) for l in self.lam],
        )

    def validate(self, atol=1e-12):
        """Check the simplex and positivity invariants; raise on violation."""
        if self.phi.size and np.min(self.phi) <= 0.0:
            raise ValueError("phi must be strictly positive")
        if self.phi.size:
            err = np.max(np.abs(self.phi.sum(axis=1) - 1.0))
            if err > atol:
                raise ValueError(f"phi rows deviate from the simplex by {err}")
        for f, lam_f in enumerate(self.lam):
            if np.any(lam_f <= 0.0):
                raise ValueError(f"lam for field {f} must be strictly positive")


@dataclass
class FitReport:
    """Per-sweep ELBO trace plus convergence status and timing."""

    elbo_trace: list = field(default_factory=list)
    sweeps_run: int = 0
    converged: bool = False
    wall_time: float = 0.0


def _blocks(n):
    return [(lo, min(lo + BLOCK_RECORDS, n)) for lo in range(0, n, BLOCK_RECORDS)]


def _map_blocks(fn, n, workers):
    """Apply fn to each record block; results come back in block order."""
    blocks = _blocks(n)
    if workers <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _field_counts(phi, codes, v_card, workers=1):
    """Responsibility-weighted value counts: out[v, k] = sum over records
    with code v of phi[n, k].  Deterministic for any worker count."""
    k = phi.shape[1]

    def block(bounds):
        lo, hi = bounds
        p = phi[lo:hi]
        c = codes[lo:hi]
        out = np.zeros((v_card, k))
        for v in range(v_card):
            rows = p[c == v]
            if rows.size:
                out[v] = rows.sum(axis=0)
        return out

    total = np.zeros((v_card, k))
    for part in _map_blocks(block, phi.shape[0], workers):
        total += part
    return total


def init_state(corpus, hp, seed):
    """Seeded soft-anchored start, then one lam pass for self-consistency.

    Record ``n`` leans on entity ``n mod K`` with a random weight drawn from
    U(0.05, 0.3); the rest of its mass is uniform over all K entities.
    Randomized symmetry breaking is mandatory — exactly uniform phi makes
    every entity identical and is a fixed point of both updates — but it
    must be anchored and soft: unanchored jitter lets a few early entities
    absorb records of many distinct individuals (merges that coordinate
    ascent can never split), while hard per-record anchors freeze out the
    slightly-corrupted records (their one mismatched field is too expensive
    to move under a small concentration until clusters carry some mass).
    The random weights also decide, for near-duplicate records anchored to
    different entities, which anchor the merged cluster keeps.
    """
    _check_compatible(corpus, hp)
    rng = np.random.default_rng(seed)
    n, k = corpus.total_records, hp.entity_count
    w = rng.uniform(0.05, 0.3, size=n)
    phi = np.empty((n, k))
    phi[:] = ((1.0 - w) / k)[:, None]
    phi[np.arange(n), np.arange(n) % k] += w
    state = VariationalState(phi=phi, lam=[None] * corpus.schema.field_count)
    update_lambda(state, corpus, hp)
    return state


def _check_compatible(corpus, hp):
    if len(hp.alpha) != corpus.schema.field_count:
        raise ValueError(
            f"{len(hp.alpha)} alpha vectors for {corpus.schema.field_count} fields"
        )
    for f, (a, v_f) in enumerate(zip(hp.alpha, corpus.schema.cardinalities)):
        if a.shape != (v_f,):
            raise ValueError(f"alpha for field {f} has length {a.shape[0]}, not {v_f}")


def update_lambda(state, corpus, hp, workers=1):
    """Closed-form Dirichlet update: prior plus responsibility-weighted counts."""
    for f in range(corpus.schema.field_count):
        counts = _field_counts(
            state.phi, corpus.values[:, f], corpus.schema.cardinalities[f], workers
        )
        state.lam[f] = hp.alpha[f][None, :] + counts.T
    return state.lam


def _score_tables(state):
    """Per field, the (V_f, K) table of psi(lam) - psi(row sum of lam)."""
    tables = []
    for lam_f in state.lam:
        t = digamma(lam_f) - digamma(lam_f.sum(axis=1))[:, None]
        tables.append(np.ascontiguousarray(t.T))
    return tables


def update_phi(state, corpus, hp, workers=1):
    """Log-space responsibility update; each row is normalized with
    log-sum-exp so large field counts cannot overflow."""
    tables = _score_tables(state)
    k = state.entity_count
    x = corpus.values

    def block(bounds):
        lo, hi = bounds
        scores = np.zeros((hi - lo, k))
        for f, table in enumerate(tables):
            scores += table[x[lo:hi, f]]
        norm = log_sum_exp(scores, axis=1)
        np.exp(scores - norm[:, None], out=scores)
        state.phi[lo:hi] = scores

    _map_blocks(block, corpus.total_records, workers)
    return state.phi


def _phi_entropy_sum(phi, workers=1):
    """sum of phi * log(phi), with 0 log 0 = 0."""

    def block(bounds):
        lo, hi = bounds
        p = phi[lo:hi]
        out = np.zeros_like(p)
        mask = p > 0.0
        np.log(p, out=out, where=mask)
        out *= p
        return float(out.sum())

    return math.fsum(_map_blocks(block, phi.shape[0], workers))


def elbo(state, corpus, hp, workers=1):
    """Evidence lower bound of the current state.

    Sum of the Dirichlet prior expectation, the expected log likelihood of
    the observed cells, the assignment entropy, the negated Dirichlet
    variational-factor expectation, and the constant -N*log(K) assignment
    prior.  Equals log p(x) exactly when K = 1.
    """
    n = corpus.total_records
    k = state.entity_count
    total = 0.0
    for f in range(corpus.schema.field_count):
        lam_f = state.lam[f]
        a_f = hp.alpha[f]
        row = lam_f.sum(axis=1)
        e_log_beta = digamma(lam_f) - digamma(row)[:, None]

        counts = _field_counts(
            state.phi, corpus.values[:, f], corpus.schema.cardinalities[f], workers
        )
        total += float(np.sum(counts.T * e_log_beta))

        total += k * float(gammaln(a_f.sum()) - gammaln(a_f).sum())
        total += float(np.sum((a_f[None, :] - 1.0) * e_log_beta))

        total -= float(
            np.sum(gammaln(row))
            - np.sum(gammaln(lam_f))
            + np.sum((lam_f - 1.0) * e_log_beta)
        )
    total -= _phi_entropy_sum(state.phi, workers)
    total -= n * math.log(k)
    return total


def elbo_grad_lambda(state, corpus, hp, k, f, v):
    """Partial derivative of the ELBO in lam[f][k, v] (0-based indices).

    Two-term trigamma form; zero at the fixed point reached by
    :func:`update_lambda`.
    """
    counts = _field_counts(
        state.phi, corpus.values[:, f], corpus.schema.cardinalities[f]
    )
    bracket = hp.alpha[f] - state.lam[f][k] + counts[:, k]
    return float(
        trigamma(float(state.lam[f][k, v])) * bracket[v]
        - trigamma(float(state.lam[f][k].sum())) * bracket.sum()
    )


def _state_is_finite(state):
    return np.all(np.isfinite(state.phi)) and all(
        np.all(np.isfinite(lam_f)) for lam_f in state.lam
    )


def _state_stats(state):
    phi, lams = state.phi, state.lam
    parts = [
        f"phi range [{phi.min() if phi.size else 0}, {phi.max() if phi.size else 0}]",
        f"phi non-finite {int(np.size(phi) - np.isfinite(phi).sum())}",
    ]
    for f, lam_f in enumerate(lams):
        parts.append(
            f"lam[{f}] range [{lam_f.min()}, {lam_f.max()}] "
            f"non-finite {int(np.size(lam_f) - np.isfinite(lam_f).sum())}"
        )
    return "; ".join(parts)


def fit(
    corpus,
    hp,
    *,
    max_sweeps=1000,
    rel_tol=1e-8,
    seed=0,
    workers=1,
    initial_state=None,
    on_sweep=None,
):
    """Run coordinate ascent until the relative ELBO change drops below
    ``rel_tol`` or ``max_sweeps`` is reached.

    Each sweep is a full phi update, a full lam update, then one ELBO
    evaluation.  ``initial_state`` overrides the seeded initialization (the
    seed is then unused); ``on_sweep(sweep, elbo, state)`` is called after
    every sweep.  Returns ``(state, FitReport)``; the trace is nondecreasing
    up to roundoff because each step maximizes the same objective.
    """
    if max_sweeps < 1:
        raise ValueError("max_sweeps must be >= 1")
    if rel_tol <= 0.0:
        raise ValueError("rel_tol must be positive")
    start = time.perf_counter()
    state = initial_state if initial_state is not None else init_state(corpus, hp, seed)
    trace = []
    converged = False
    for sweep in range(1, max_sweeps + 1):
        try:
            update_phi(state, corpus, hp, workers)
            update_lambda(state, corpus, hp, workers)
            value = elbo(state, corpus, hp, workers)
        except ValueError as exc:
            # Finite-but-invalid states are caller errors; NaN/inf means the
            # optimization itself broke down.
            if _state_is_finite(state):
                raise
            raise NumericalFailureError(
                sweep, f"non-finite state: {exc}; {_state_stats(state)}"
            ) from exc
        if not math.isfinite(value):
            raise NumericalFailureError(
                sweep, f"ELBO is {value}; {_state_stats(state)}"
            )
        trace.append(value)
        if on_sweep is not None:
            on_sweep(sweep, value, state)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= rel_tol * abs(trace[-1]):
            converged = True
            break
    report = FitReport(
        elbo_trace=trace,
        sweeps_run=len(trace),
        converged=converged,
        wall_time=time.perf_counter() - start,
    )
    return state, report


def save_state(path, state, corpus, hp):
    """Checkpoint phi and lam with a header describing the problem shape.

    The layout is an ``.npz`` archive; loading it back reproduces every
    array bit-exactly.
    """
    arrays = {
        "version": np.asarray(STATE_FORMAT_VERSION),
        "db_sizes": np.asarray(corpus.db_sizes, dtype=np.int64),
        "cardinalities": np.asarray(corpus.schema.cardinalities, dtype=np.int64),
        "entity_count": np.asarray(hp.entity_count),
        "phi": state.phi,
    }
    for f, (a_f, lam_f) in enumerate(zip(hp.alpha, state.lam)):
        arrays[f"alpha_{f}"] = a_f
        arrays[f"lam_{f}"] = lam_f
    np.savez(path, **arrays)


def load_state(path):
    """Read a checkpoint; returns ``(VariationalState, header_dict)``."""
    with np.load(path) as data:
        version = int(data["version"])
        if version != STATE_FORMAT_VERSION:
            raise ValueError(f"unsupported state format version {version}")
        cards = data["cardinalities"]
        header = {
            "version": version,
            "db_sizes": tuple(int(s) for s in data["db_sizes"]),
            "cardinalities": [int(v) for v in cards],
            "entity_count": int(data["entity_count"]),
            "alpha": [data[f"alpha_{f}"] for f in range(len(cards))],
        }
        state = VariationalState(
            phi=data["phi"], lam=[data[f"lam_{f}"] for f in range(len(cards))]
        )
    return state, header
