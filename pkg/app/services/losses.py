from typing import Optional

from app.core.errors import ShapeError
from app.services.semantic_maps import minmax_normalize, select_class
from app.services.tensor import Tensor, as_tensor, l1_distance, log_softmax, select


def cross_entropy(logits: Tensor, y: int) -> Tensor:
    """Softmax cross-entropy of one logit vector against class ``y``"""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"cross_entropy: expected a logit vector, got {logits.shape}")
    if not 0 <= y < logits.shape[0]:
        raise ShapeError(f"cross_entropy: class {y} out of range for {logits.shape[0]} classes")
    return -select(log_softmax(logits), 0, y)


def classification_loss(logits_F_p: Tensor, logits_F_h: Tensor,
                        logits_T_p: Optional[Tensor], logits_T_h: Optional[Tensor],
                        y: int) -> Tensor:
    """L_cls = CE_F + CE_T, each the mean over the primal and shuffled branch.

    Without refined features (matching off) the CE_T term is absent.
    """
    loss = 0.5 * (cross_entropy(logits_F_p, y) + cross_entropy(logits_F_h, y))
    if logits_T_p is not None and logits_T_h is not None:
        loss = loss + 0.5 * (cross_entropy(logits_T_p, y) + cross_entropy(logits_T_h, y))
    return loss


def equivariant_loss(T_p: Tensor, T_h: Tensor, M_p: Tensor, M_h: Tensor, y: int,
                     normalize: bool = False) -> Tensor:
    """L_er = |T_p[y] - M_h| + |T_h[y] - M_p|, each a mean over the hw cells.

    With ``normalize`` the selected refined channels are min-max scaled to
    [0, 1] first, matching the scale of the normalized semantic maps.
    """
    T_p, T_h, M_p, M_h = (as_tensor(t) for t in (T_p, T_h, M_p, M_h))
    if T_p.shape != T_h.shape or T_p.ndim != 3:
        raise ShapeError.mismatch("equivariant_loss refined", T_p.shape, T_h.shape)
    if M_p.shape != T_p.shape[1:] or M_h.shape != T_p.shape[1:]:
        raise ShapeError.mismatch("equivariant_loss maps", T_p.shape, M_p.shape, M_h.shape)

    refined_p, refined_h = select_class(T_p, y), select_class(T_h, y)
    if normalize:
        refined_p, refined_h = minmax_normalize(refined_p), minmax_normalize(refined_h)
    return l1_distance(refined_p, M_h) + l1_distance(refined_h, M_p)


def total_loss(l_cls: Tensor, l_er: Tensor, weight: float) -> Tensor:
    """L_total = L_cls + lambda * L_er"""
    if weight < 0:
        raise ValueError(f"equivariant weight must be >= 0, got {weight}")
    return as_tensor(l_cls) + weight * as_tensor(l_er)
