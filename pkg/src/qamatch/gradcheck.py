"""Central finite-difference verification of analytic gradients.

The numeric side re-evaluates the forward function at perturbed inputs,
so it is independent of the tape and its backward rules by construction.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# Relative error uses a floor so structurally-zero gradients compare as
# exact zeros instead of dividing noise by noise.
REL_ERR_FLOOR = 1e-5


def numeric_gradient(value: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``value()`` with respect to every element of x.

    ``x`` is mutated in place during probing and restored afterwards;
    ``value`` must re-run the forward pass reading the current contents.
    """
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        keep = flat_x[i]
        flat_x[i] = keep + h
        up = value()
        flat_x[i] = keep - h
        down = value()
        flat_x[i] = keep
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_ERR_FLOOR) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


# Fixture texts drawn from a small fixed alphabet; rotated until the margin
# objective is safely inside its active (non-flat) region.
_FIXTURE_TRIPLES = [
    ("abcde", "abcfg", "hijhi"),
    ("bcdef", "bcdgh", "ijaij"),
    ("cdefg", "cdehi", "jabja"),
    ("fghij", "fghab", "cdecd"),
]
_FIXTURE_CORPUS = ["abcdefghij"]
_ACTIVE_REGION_MIN = 0.05


def check_model_gradients(cfg, seed: int = 0, h: float = 1e-5) -> float:
    """Finite-difference sweep over every parameter scalar of a model.

    Builds fresh parameters for ``cfg``, picks a fixture triplet whose
    margin loss sits safely inside the active region (so the hinge kink
    cannot corrupt the probe), then compares the taped gradient of the
    full embed -> encode -> head -> cosine -> loss pass against central
    differences.  Returns the largest relative error over all scalars.
    """
    from .errors import ContractError
    from .matching import LossConfig, encode_pair, init_model_params, triplet_loss_node
    from .tensor import ComputationTape, backward
    from .text import build_vocab

    vocab = build_vocab(_FIXTURE_CORPUS)
    if vocab.size != cfg.vocab_size:
        raise ContractError(
            f"gradcheck fixture vocabulary has size {vocab.size}, config says {cfg.vocab_size}"
        )
    params = init_model_params(cfg, seed)
    loss_cfg = LossConfig(margin=1.0)

    chosen = None
    for q_text, pos_text, neg_text in _FIXTURE_TRIPLES:
        q_seq, pos_seq = encode_pair(q_text, pos_text, vocab, cfg)
        _, neg_seq = encode_pair(q_text, neg_text, vocab, cfg)
        value = triplet_loss_node(q_seq, pos_seq, neg_seq, cfg, params, loss_cfg).item()
        if value >= _ACTIVE_REGION_MIN:
            chosen = (q_seq, pos_seq, neg_seq)
            break
    if chosen is None:
        raise ContractError("no gradcheck fixture lands in the active loss region")
    q_seq, pos_seq, neg_seq = chosen

    def value() -> float:
        return triplet_loss_node(q_seq, pos_seq, neg_seq, cfg, params, loss_cfg).item()

    params.zero_grad()
    with ComputationTape() as tape:
        loss = triplet_loss_node(q_seq, pos_seq, neg_seq, cfg, params, loss_cfg)
    backward(loss, tape)

    worst = 0.0
    for _, tensor in params.items():
        numeric = numeric_gradient(value, tensor.data, h)
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def gradcheck_vocab_size() -> int:
    """Vocabulary size implied by the built-in gradcheck fixture."""
    from .text import build_vocab

    return build_vocab(_FIXTURE_CORPUS).size
