"""Linear-chain CRF over the three-step score sequence.

The chain has exactly three emission steps (entity-1 type, relation,
entity-2 type). Scores live in log space: a path score is the sum of the
transition scores along begin -> y1 -> y2 -> y3 -> end plus the three
emission scores d[i, y_i]. The transition matrix has side N+2 where the two
extra rows/columns are the begin tag (index N) and end tag (index N+1).

All functions are pure given (d, Q) and safe to call concurrently.
"""

import itertools

import numpy as np

from entrel.kernels import logsumexp, logsumexp_rows

SEQ_LEN = 3
MASK_PENALTY = -1e9  # additive penalty for classes disallowed at a position
ENUMERATION_LIMIT = 32  # brute-force oracle refuses larger class spaces


def _check_shapes(d: np.ndarray, q: np.ndarray) -> int:
    if d.ndim != 2 or d.shape[0] != SEQ_LEN:
        raise ValueError(f"score sequence must be {SEQ_LEN}xN, got {d.shape}")
    n = d.shape[1]
    if q.shape != (n + 2, n + 2):
        raise ValueError(
            f"transition matrix must be {(n + 2, n + 2)} for {n} classes, got {q.shape}"
        )
    return n


def _check_labels(y, n: int):
    y = tuple(int(v) for v in y)
    if len(y) != SEQ_LEN or any(v < 0 or v >= n for v in y):
        raise ValueError(f"label sequence {y} out of class range 0..{n - 1}")
    return y


def sequence_score(d: np.ndarray, y, q: np.ndarray) -> float:
    """Score of one label triple: transitions (incl. begin/end) + emissions."""
    n = _check_shapes(d, q)
    y1, y2, y3 = _check_labels(y, n)
    begin, end = n, n + 1
    return float(
        q[begin, y1] + d[0, y1]
        + q[y1, y2] + d[1, y2]
        + q[y2, y3] + d[2, y3]
        + q[y3, end]
    )


def forward_logZ(d: np.ndarray, q: np.ndarray) -> float:
    """Log-partition over all N^3 label triples via the forward algorithm."""
    n = _check_shapes(d, q)
    begin, end = n, n + 1
    inner = q[:n, :n]
    alpha = q[begin, :n] + d[0]
    for i in range(1, SEQ_LEN):
        # sum over the previous class: lse down each column of alpha[c] + Q[c, c']
        alpha = logsumexp_rows((alpha[:, None] + inner).T) + d[i]
    return logsumexp(alpha + q[:n, end])


def _forward_backward(d: np.ndarray, q: np.ndarray):
    n = d.shape[1]
    begin, end = n, n + 1
    inner = q[:n, :n]
    alpha = np.empty((SEQ_LEN, n), dtype=d.dtype)
    alpha[0] = q[begin, :n] + d[0]
    for i in range(1, SEQ_LEN):
        alpha[i] = logsumexp_rows((alpha[i - 1][:, None] + inner).T) + d[i]
    beta = np.empty((SEQ_LEN, n), dtype=d.dtype)
    beta[SEQ_LEN - 1] = q[:n, end]
    for i in range(SEQ_LEN - 2, -1, -1):
        beta[i] = logsumexp_rows(inner + d[i + 1] + beta[i + 1])
    log_z = logsumexp(alpha[SEQ_LEN - 1] + beta[SEQ_LEN - 1])
    return alpha, beta, log_z


def marginals(d: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-position class marginals P(y_i = c); each row sums to 1."""
    _check_shapes(d, q)
    alpha, beta, log_z = _forward_backward(d, q)
    return np.exp(alpha + beta - log_z)


def nll_and_gradients(d: np.ndarray, q: np.ndarray, gold):
    """Negative log-likelihood of the gold triple plus exact gradients.

    Returns (loss, grad_d, grad_q) with loss = logZ - score(gold),
    grad_d[i, c] = P(y_i = c) - [gold_i = c] and grad_q = expected minus
    observed transition counts, begin/end transitions included.
    """
    n = _check_shapes(d, q)
    y1, y2, y3 = _check_labels(gold, n)
    begin, end = n, n + 1
    inner = q[:n, :n]
    alpha, beta, log_z = _forward_backward(d, q)
    marg = np.exp(alpha + beta - log_z)

    grad_d = marg.copy()
    grad_d[0, y1] -= 1.0
    grad_d[1, y2] -= 1.0
    grad_d[2, y3] -= 1.0

    grad_q = np.zeros_like(q)
    for i in range(SEQ_LEN - 1):
        pair = np.exp(
            alpha[i][:, None] + inner + d[i + 1][None, :] + beta[i + 1][None, :] - log_z
        )
        grad_q[:n, :n] += pair
    grad_q[y1, y2] -= 1.0
    grad_q[y2, y3] -= 1.0
    grad_q[begin, :n] += marg[0]
    grad_q[begin, y1] -= 1.0
    grad_q[:n, end] += marg[SEQ_LEN - 1]
    grad_q[y3, end] -= 1.0

    loss = log_z - sequence_score(d, (y1, y2, y3), q)
    return loss, grad_d, grad_q


def apply_position_mask(d: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Additively penalize disallowed classes per position (finite, not -inf)."""
    if allowed.shape != d.shape:
        raise ValueError(f"mask shape {allowed.shape} != scores shape {d.shape}")
    return np.where(allowed, d, d + MASK_PENALTY)


def viterbi(d: np.ndarray, q: np.ndarray, allowed: np.ndarray | None = None):
    """Highest-scoring label triple and its score.

    Ties resolve to the lowest class index at the earliest differing
    position (the lexicographically smallest optimal sequence), which is
    what a first-occurrence argmax over the full enumeration returns.
    """
    n = _check_shapes(d, q)
    if allowed is not None:
        d = apply_position_mask(d, allowed)
    begin, end = n, n + 1
    inner = q[:n, :n]
    # suffix DP so the earliest position is decided first; np.argmax takes
    # the first (lowest-index) maximum
    gamma = d[SEQ_LEN - 1] + q[:n, end]
    backptr = []
    for i in range(SEQ_LEN - 2, -1, -1):
        cand = inner + gamma[None, :]
        backptr.append(np.argmax(cand, axis=1))
        gamma = d[i] + cand.max(axis=1)
    backptr.reverse()
    first = q[begin, :n] + gamma
    y1 = int(np.argmax(first))
    y2 = int(backptr[0][y1])
    y3 = int(backptr[1][y2])
    return (y1, y2, y3), float(first[y1])


def enumerate_scores(d: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Explicit score of every label triple as an [N, N, N] array.

    C-order flattening enumerates triples lexicographically, so a
    first-occurrence argmax over the flat array matches viterbi's
    tie-breaking. Refuses class spaces too large to enumerate.
    """
    n = _check_shapes(d, q)
    if n > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration oracle refuses N={n} > {ENUMERATION_LIMIT}")
    begin, end = n, n + 1
    inner = q[:n, :n]
    first = q[begin, :n] + d[0]
    return (
        first[:, None, None]
        + inner[:, :, None]
        + d[1][None, :, None]
        + inner[None, :, :]
        + d[2][None, None, :]
        + q[:n, end][None, None, :]
    )


def brute_force_logZ(d: np.ndarray, q: np.ndarray) -> float:
    """Oracle log-partition: logsumexp over the explicit enumeration."""
    return logsumexp(enumerate_scores(d, q).ravel())


def brute_force_best(d: np.ndarray, q: np.ndarray):
    """Oracle argmax: best triple by explicit enumeration, lexicographic ties."""
    scores = enumerate_scores(d, q)
    flat = int(np.argmax(scores))
    best = np.unravel_index(flat, scores.shape)
    return tuple(int(v) for v in best), float(scores[best])


def brute_force_marginals(d: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Oracle marginals by summing exp(score - logZ) over enumerated paths."""
    n = d.shape[1]
    scores = enumerate_scores(d, q)
    log_z = logsumexp(scores.ravel())
    probs = np.exp(scores - log_z)
    out = np.zeros((SEQ_LEN, n), dtype=d.dtype)
    for y in itertools.product(range(n), repeat=SEQ_LEN):
        for i in range(SEQ_LEN):
            out[i, y[i]] += probs[y]
    return out
