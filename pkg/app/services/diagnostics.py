"""Inspection helpers behind the ``match-demo`` and ``grad-check`` commands."""
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.config import Settings
from app.core.logging import get_logger
from app.services import tensor as ops
from app.services.gradcheck import grad_check
from app.services.imaging import write_heatmap, write_ppm
from app.services.matching import cost_matrix, refine, sinkhorn
from app.services.params import ModelParams, init_params
from app.services.semantic_maps import minmax_normalize
from app.services.shuffle import make_pair
from app.services.tensor import Tensor
from app.services.training import forward_pair

logger = get_logger("diagnostics")

TOY_SETTINGS = {
    "image_size": 8,
    "patch_size": 4,
    "channels": 1,
    "embed_dim": 4,
    "depth": 1,
    "num_heads": 2,
    "mlp_ratio": 2,
    "num_classes": 2,
    "across_heads": 2,
    "init_std": 0.3,
    "sinkhorn_max_iters": 10,
    "sinkhorn_tol": 0.0,
    "shuffle_eta": 1.0,
}


class MatchDemoReport(BaseModel):
    marginal_error: float
    objective: float
    iterations: int
    converged: bool
    shuffled_blocks: list = Field(default_factory=list)
    primal_path: Optional[str] = None
    shuffled_path: Optional[str] = None
    flow_path: Optional[str] = None


def toy_settings(**overrides) -> Settings:
    """Four-patch, two-class model small enough for finite differences"""
    values = dict(TOY_SETTINGS)
    values.update(overrides)
    return Settings(**values)


def match_demo(settings: Settings, image: np.ndarray, label: int, seed: int,
               params: Optional[ModelParams] = None, out_dir: Optional[Path] = None) -> MatchDemoReport:
    """Build one pair, solve its matching and write primal, shuffled and flow images"""
    params = params if params is not None else init_params(settings)
    primal = Tensor(image)
    shuffled, record = make_pair(primal, settings, seed)
    result = forward_pair(params, primal, shuffled, label, settings.model_copy(update={"use_matching": True}))
    plan = result.plan

    report = MatchDemoReport(
        marginal_error=plan.marginal_error,
        objective=plan.objective(),
        iterations=plan.iterations,
        converged=plan.converged,
        shuffled_blocks=record.shuffled_blocks if record is not None else [],
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ppm(out_dir / "primal.ppm", primal.numpy())
        write_ppm(out_dir / "shuffled.ppm", shuffled.numpy())
        write_heatmap(out_dir / "flow.pgm", minmax_normalize(plan.flow).numpy())
        report = report.model_copy(update={
            "primal_path": str(out_dir / "primal.ppm"),
            "shuffled_path": str(out_dir / "shuffled.ppm"),
            "flow_path": str(out_dir / "flow.pgm"),
        })
    logger.info("match_demo", **report.model_dump(exclude_none=True))
    return report


def pipeline_grad_check(settings: Optional[Settings] = None, seed: int = 0, label: int = 1,
                        step: float = 1e-5, floor: float = 1e-12) -> float:
    """Max relative error of the full-loss gradient over every parameter.

    The staircase marginals and the equivariance targets are fixed at the
    starting point, so both sides of the comparison see one function.
    """
    settings = settings or toy_settings()
    rng = np.random.default_rng(seed)
    image = Tensor(rng.uniform(0.0, 1.0, size=(settings.channels, settings.image_size, settings.image_size)))
    shuffled, _ = make_pair(image, settings, seed)
    template = init_params(settings, seed=seed)
    frozen = forward_pair(template, image, shuffled, label, settings).frozen

    def loss(vector: Tensor) -> Tensor:
        params = ModelParams.from_vector(vector, template)
        return forward_pair(params, image, shuffled, label, settings, frozen=frozen).loss

    error = grad_check(loss, Tensor(template.to_vector()), step=step, floor=floor)
    logger.info("pipeline_grad_check", max_relative_error=error, parameters=template.num_values())
    return error


def _projected(op: Callable[[Tensor], Tensor], shape, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.uniform(-1.0, 1.0, size=shape))

    def f(x: Tensor) -> Tensor:
        return ops.tensor_sum(op(x) * weights)
    return f


def op_grad_checks(seed: int = 0, step: float = 1e-5) -> Dict[str, float]:
    """Finite-difference check of each differentiable op at a random point in [-1, 1]"""
    rng = np.random.default_rng(seed)
    other = Tensor(rng.uniform(-1.0, 1.0, size=(3, 4)))
    kernel = Tensor(rng.uniform(-1.0, 1.0, size=(2, 3, 3, 3)))
    cases: Dict[str, tuple] = {
        "add": (lambda x: x + other, (3, 4)),
        "multiply": (lambda x: x * other, (3, 4)),
        "divide": (lambda x: other / (x * x + 1.0), (3, 4)),
        "exp": (ops.exp, (3, 4)),
        "log": (lambda x: ops.log(x * x + 0.5), (3, 4)),
        "sqrt": (lambda x: ops.sqrt(x * x + 0.5), (3, 4)),
        "gelu": (ops.gelu, (3, 4)),
        "softmax": (lambda x: ops.softmax(x, axis=-1), (3, 4)),
        "log_softmax": (lambda x: ops.log_softmax(x, axis=0), (3, 4)),
        "logsumexp": (lambda x: ops.logsumexp(x, axis=1), (3,)),
        "layer_norm": (ops.layer_norm, (3, 4)),
        "matmul": (lambda x: ops.matmul(x, ops.transpose(other)), (3, 3)),
        "transpose": (ops.transpose, (4, 3)),
        "reshape": (lambda x: ops.reshape(x, (2, 6)), (2, 6)),
        "mean": (lambda x: ops.mean(x, axis=0), (4,)),
        "concatenate": (lambda x: ops.concatenate([x, other], axis=0), (6, 4)),
        "take": (lambda x: ops.take(x, 1, 1, 3), (3, 2)),
        "conv2d_3x3": (lambda x: ops.conv2d_3x3(ops.reshape(x, (3, 2, 2)), kernel), (2, 2, 2)),
        "upsample_bilinear": (lambda x: ops.upsample_bilinear(x, (5, 7)), (5, 7)),
        "minmax_normalize": (minmax_normalize, (3, 4)),
    }
    point = Tensor(rng.uniform(-1.0, 1.0, size=(3, 4)))
    errors = {}
    for name, (op, out_shape) in cases.items():
        errors[name] = grad_check(_projected(op, out_shape, rng), point, step=step)
    return errors


def matching_grad_check(seed: int = 0, epsilon: float = 0.5, iterations: int = 10,
                        step: float = 1e-5) -> float:
    """Gradient of a projection of refine(sinkhorn(...)) with respect to O_p on a 2 x 2 grid"""
    rng = np.random.default_rng(seed)
    O_h = Tensor(rng.uniform(-1.0, 1.0, size=(3, 2, 2)))
    source = rng.dirichlet(np.ones(4))
    target = rng.dirichlet(np.ones(4))
    weights = Tensor(rng.uniform(-1.0, 1.0, size=(3, 2, 2)))

    def f(O_p: Tensor) -> Tensor:
        plan = sinkhorn(cost_matrix(O_p, O_h), source, target, epsilon=epsilon,
                        max_iters=iterations, tol=0.0)
        T_p, T_h = refine(O_p, O_h, plan.flow)
        return ops.tensor_sum(T_p * weights) + ops.tensor_sum(T_h * weights)

    return grad_check(f, Tensor(rng.uniform(-1.0, 1.0, size=(3, 2, 2))), step=step)
