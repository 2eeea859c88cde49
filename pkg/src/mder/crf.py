"""Linear-chain CRF over per-character tag scores.

The transition matrix A is (|L|+2) x (|L|+2) with virtual START/STOP states
appended after the six tags, so a path y over scores Z is worth

    sum_i Z[i, y_i]  +  A[START, y_1] + sum_i A[y_i, y_{i+1}] + A[y_m, STOP]

Transitions into START and out of STOP are fixed to -inf; all other entries
(including PAD rows) are learned. All math runs in log space. Masked (PAD)
positions contribute neither emissions nor transitions; the STOP transition
attaches at the last real position.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import torch

from .errors import OracleSizeError, ShapeError
from .tagscheme import NUM_TAGS, TAGS

START = NUM_TAGS
STOP = NUM_TAGS + 1
TRANS_SIZE = NUM_TAGS + 2

STATE_NAMES = TAGS + ("START", "STOP")


def full_transition_matrix(A: torch.Tensor) -> torch.Tensor:
    """A with the structurally forbidden entries (into START, out of STOP)
    pinned to -inf; this is the form serialized in checkpoints."""
    out = A.detach().clone()
    out[:, START] = float("-inf")
    out[STOP, :] = float("-inf")
    return out


def _check_transitions(A: torch.Tensor) -> None:
    if A.shape != (TRANS_SIZE, TRANS_SIZE):
        raise ShapeError(f"transition matrix must be {TRANS_SIZE}x{TRANS_SIZE}, "
                         f"got {tuple(A.shape)}")


def _batched(Z: torch.Tensor, mask: torch.Tensor | None):
    """View (m, L) inputs as a batch of one; mask defaults to all-real."""
    single = Z.dim() == 2
    if single:
        Z = Z.unsqueeze(0)
    if mask is None:
        mask = torch.ones(Z.shape[:2], dtype=torch.bool, device=Z.device)
    elif mask.dim() == 1:
        mask = mask.unsqueeze(0)
    return Z, mask.bool(), single


def path_score(
    Z: torch.Tensor, y: torch.Tensor, A: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Emission plus transition score of tag path(s) y, START/STOP included.

    Z is (m, L) or (B, m, L); y matches with one index per position.
    Padding must be a suffix (mask True on a prefix of each row).
    """
    _check_transitions(A)
    Z, mask, single = _batched(Z, mask)
    if not torch.is_tensor(y):
        y = torch.as_tensor(y, dtype=torch.long, device=Z.device)
    if y.dim() == 1:
        y = y.unsqueeze(0)
    if y.shape != Z.shape[:2]:
        raise ShapeError(f"path shape {tuple(y.shape)} does not match scores "
                         f"{tuple(Z.shape[:2])}")
    batch, m, _ = Z.shape
    lengths = mask.sum(dim=1)
    rows = torch.arange(batch, device=Z.device)

    emit = Z.gather(2, y.unsqueeze(2)).squeeze(2)
    emit = (emit * mask).sum(dim=1)

    score = emit + A[START, y[:, 0]] + A[y[rows, lengths - 1], STOP]
    if m > 1:
        trans = A[y[:, :-1], y[:, 1:]]
        score = score + (trans * mask[:, 1:]).sum(dim=1)
    return score[0] if single else score


def log_partition(
    Z: torch.Tensor, A: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """log sum over all |L|^m paths of exp(path_score), by the forward
    algorithm with log-sum-exp at every step."""
    _check_transitions(A)
    Z, mask, single = _batched(Z, mask)
    m = Z.shape[1]
    trans = A[:NUM_TAGS, :NUM_TAGS]

    alpha = Z[:, 0, :] + A[START, :NUM_TAGS]
    for t in range(1, m):
        step = torch.logsumexp(alpha.unsqueeze(2) + trans.unsqueeze(0), dim=1)
        step = step + Z[:, t, :]
        keep = mask[:, t].unsqueeze(1)
        alpha = torch.where(keep, step, alpha)
    out = torch.logsumexp(alpha + A[:NUM_TAGS, STOP], dim=1)
    return out[0] if single else out


def nll_loss(
    Z: torch.Tensor, gold: torch.Tensor, A: torch.Tensor,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Negative log-likelihood of the gold path(s): log_partition - path_score.
    Always >= 0; per-sequence values for batched input."""
    return log_partition(Z, A, mask) - path_score(Z, gold, A, mask)


def softmax_nll(
    Z: torch.Tensor, gold: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Per-position cross-entropy summed over real positions: the training
    objective of the CRF-ablated model."""
    Z, mask, single = _batched(Z, mask)
    if not torch.is_tensor(gold):
        gold = torch.as_tensor(gold, dtype=torch.long, device=Z.device)
    if gold.dim() == 1:
        gold = gold.unsqueeze(0)
    logp = torch.log_softmax(Z, dim=2)
    picked = logp.gather(2, gold.unsqueeze(2)).squeeze(2)
    out = -(picked * mask).sum(dim=1)
    return out[0] if single else out


def viterbi(Z, A) -> tuple[list[int], float]:
    """Highest-scoring tag path and its score (which equals path_score of the
    returned path). Ties resolve to the lowest tag index at each backtrack
    step, so decoding is deterministic.
    """
    Z = np.asarray(
        Z.detach().cpu() if torch.is_tensor(Z) else Z, dtype=np.float64
    )
    A = np.asarray(
        A.detach().cpu() if torch.is_tensor(A) else A, dtype=np.float64
    )
    if A.shape != (TRANS_SIZE, TRANS_SIZE):
        raise ShapeError(f"transition matrix must be {TRANS_SIZE}x{TRANS_SIZE}")
    m = Z.shape[0]
    trans = A[:NUM_TAGS, :NUM_TAGS]

    delta = Z[0] + A[START, :NUM_TAGS]
    backptr = np.zeros((m, NUM_TAGS), dtype=np.int64)
    for t in range(1, m):
        cand = delta[:, None] + trans
        backptr[t] = np.argmax(cand, axis=0)  # first max = lowest index
        delta = Z[t] + np.max(cand, axis=0)
    delta = delta + A[:NUM_TAGS, STOP]

    path = [int(np.argmax(delta))]
    for t in range(m - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, float(np.max(delta))


def softmax_decode(Z) -> list[int]:
    """Independent per-position argmax (the CRF-ablated decoder)."""
    Z = np.asarray(Z.detach().cpu() if torch.is_tensor(Z) else Z)
    return [int(i) for i in np.argmax(Z, axis=1)]


def brute_force(Z, A) -> tuple[list[int], float, float]:
    """Exhaustively score every tag path: (best path, best score, log
    partition). Test oracle only; plain Python on purpose.
    """
    Z = np.asarray(
        Z.detach().cpu() if torch.is_tensor(Z) else Z, dtype=np.float64
    )
    A = np.asarray(
        A.detach().cpu() if torch.is_tensor(A) else A, dtype=np.float64
    )
    m = Z.shape[0]
    if NUM_TAGS**m > 10**6:
        raise OracleSizeError(f"{NUM_TAGS}^{m} paths exceed the oracle limit")

    best_path: tuple[int, ...] = ()
    best_score = -math.inf
    scores = []
    for path in itertools.product(range(NUM_TAGS), repeat=m):
        s = A[START, path[0]]
        for i in range(m):
            s += Z[i, path[i]]
            if i + 1 < m:
                s += A[path[i], path[i + 1]]
        s += A[path[-1], STOP]
        scores.append(s)
        if s > best_score:
            best_score = s
            best_path = path

    mx = max(scores)
    log_z = mx + math.log(sum(math.exp(s - mx) for s in scores))
    return list(best_path), float(best_score), float(log_z)
