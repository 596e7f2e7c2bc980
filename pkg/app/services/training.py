"""Siamese training: pair construction, shared-weight forward pass, losses and updates."""
import json
import multiprocessing
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.config import Settings
from app.core.errors import DatasetError, NonFiniteError
from app.core.logging import get_logger
from app.core.seeds import derive_seed
from app.models.dataset import DatasetManifest
from app.models.maps import SemanticMaps
from app.models.matching import StaircaseConfig, TransportPlan
from app.models.training import LossBreakdown, TrainLogRecord
from app.services import metrics
from app.services.checkpoint import save_checkpoint
from app.services.dataset import load_image
from app.services.losses import classification_loss, cross_entropy, equivariant_loss, total_loss
from app.services.matching import (
    across_transformer,
    cost_matrix,
    refine,
    sinkhorn,
    staircase,
    to_distribution,
)
from app.services.optim import make_optimizer
from app.services.params import ModelParams, init_params
from app.services.semantic_maps import build_maps, gap_logits, normalize_map
from app.services.shuffle import make_pair
from app.services.tensor import GradTape, Tensor, as_tensor
from app.services.vit import encode

logger = get_logger("training")

Example = Tuple[np.ndarray, int]


@dataclass(frozen=True)
class FrozenTargets:
    """Quantities treated as constants by the reverse pass.

    The transport marginals come from the staircase of the normalized maps and
    the L_er targets are the normalized maps themselves. Passing them in from
    a reference point keeps a finite-difference check on the same function the
    tape differentiates.
    """
    source: np.ndarray
    target: np.ndarray
    m_primal: np.ndarray
    m_shuffled: np.ndarray


@dataclass
class PairForward:
    loss: Tensor
    l_cls: Tensor
    l_er: Tensor
    ce_terms: Tuple[Tensor, Tensor, Optional[Tensor], Optional[Tensor]]
    primal: SemanticMaps
    shuffled: SemanticMaps
    plan: Optional[TransportPlan]
    frozen: Optional[FrozenTargets]

    def breakdown(self) -> LossBreakdown:
        ce_fp, ce_fh, ce_tp, ce_th = self.ce_terms
        return LossBreakdown(
            l_cls=self.l_cls.item(),
            l_er=self.l_er.item(),
            l_total=self.loss.item(),
            ce_f_primal=ce_fp.item(),
            ce_f_shuffled=ce_fh.item(),
            ce_t_primal=ce_tp.item() if ce_tp is not None else 0.0,
            ce_t_shuffled=ce_th.item() if ce_th is not None else 0.0,
        )


def freeze_targets(primal: SemanticMaps, shuffled: SemanticMaps, settings: Settings) -> FrozenTargets:
    m_p, m_h = normalize_map(primal.M), normalize_map(shuffled.M)
    stairs = StaircaseConfig(mu=settings.stair_scale)
    return FrozenTargets(
        source=to_distribution(staircase(m_p, stairs)).weights,
        target=to_distribution(staircase(m_h, stairs)).weights,
        m_primal=m_p,
        m_shuffled=m_h,
    )


def forward_pair(params: ModelParams, primal: Tensor, shuffled: Tensor, label: int,
                 settings: Settings, frozen: Optional[FrozenTargets] = None) -> PairForward:
    """Full Siamese forward pass for one (primal, shuffled) pair and its losses"""
    encoded_p = encode(primal, params, settings)
    encoded_h = encoded_p if shuffled is primal else encode(shuffled, params, settings)
    maps_p = build_maps(encoded_p, params, settings, label)
    maps_h = build_maps(encoded_h, params, settings, label)

    logits_F_p, logits_F_h = gap_logits(maps_p.F_prime), gap_logits(maps_h.F_prime)
    ce_fp, ce_fh = cross_entropy(logits_F_p, label), cross_entropy(logits_F_h, label)

    if not settings.use_matching:
        l_cls = classification_loss(logits_F_p, logits_F_h, None, None, label)
        l_er = Tensor(0.0)
        return PairForward(
            loss=total_loss(l_cls, l_er, settings.equivariant_weight),
            l_cls=l_cls, l_er=l_er, ce_terms=(ce_fp, ce_fh, None, None),
            primal=maps_p, shuffled=maps_h, plan=None, frozen=None,
        )

    if frozen is None:
        frozen = freeze_targets(maps_p, maps_h, settings)

    O_p, O_h = across_transformer(maps_p.F_prime, maps_h.F_prime, params, settings)
    plan = sinkhorn(
        cost_matrix(O_p, O_h),
        frozen.source,
        frozen.target,
        epsilon=settings.sinkhorn_epsilon,
        max_iters=settings.sinkhorn_max_iters,
        tol=settings.sinkhorn_tol,
    )
    T_p, T_h = refine(O_p, O_h, plan.flow)
    logits_T_p, logits_T_h = gap_logits(T_p), gap_logits(T_h)

    l_cls = classification_loss(logits_F_p, logits_F_h, logits_T_p, logits_T_h, label)
    l_er = equivariant_loss(T_p, T_h, Tensor(frozen.m_primal), Tensor(frozen.m_shuffled),
                            label, normalize=True)
    return PairForward(
        loss=total_loss(l_cls, l_er, settings.equivariant_weight),
        l_cls=l_cls,
        l_er=l_er,
        ce_terms=(ce_fp, ce_fh, cross_entropy(logits_T_p, label), cross_entropy(logits_T_h, label)),
        primal=maps_p,
        shuffled=maps_h,
        plan=plan,
        frozen=frozen,
    )


def _check_finite(result: PairForward) -> None:
    for term, value in (("l_cls", result.l_cls), ("l_er", result.l_er), ("l_total", result.loss)):
        if not np.isfinite(value.item()):
            raise NonFiniteError(f"training diverged: {term} = {value.item()}")


def image_gradients(params: ModelParams, image: Tensor, label: int, settings: Settings,
                    pair_seed: int) -> Tuple[List[np.ndarray], LossBreakdown]:
    """Loss gradients of one image, both branches accumulated into the shared parameters"""
    image = as_tensor(image)
    shuffled, _ = make_pair(image, settings, pair_seed)
    with GradTape() as tape:
        params.watch(tape)
        result = forward_pair(params, image, shuffled, label, settings)
        _check_finite(result)
        grads = tape.gradient(result.loss, params.tensors())
    return [g.numpy() for g in grads], result.breakdown()


def _mean_breakdown(parts: Sequence[LossBreakdown]) -> LossBreakdown:
    fields = LossBreakdown.model_fields
    return LossBreakdown(**{
        name: sum(getattr(p, name) for p in parts) / len(parts) for name in fields
    })


ImageJob = Tuple[np.ndarray, int, int]
ImageResult = Tuple[List[np.ndarray], LossBreakdown]


def _gradient_chunk(arrays: Dict[str, np.ndarray], settings: Settings,
                    jobs: Sequence[ImageJob]) -> List[ImageResult]:
    """Worker entry point: parameters travel as plain arrays, results keep job order"""
    params = ModelParams({name: Tensor(value) for name, value in arrays.items()})
    return [image_gradients(params, image, label, settings, seed) for image, label, seed in jobs]


def _batch_results(params: ModelParams, settings: Settings, jobs: List[ImageJob],
                   executor: Optional[Executor], workers: int) -> List[ImageResult]:
    if executor is None or workers <= 1 or len(jobs) <= 1:
        return [image_gradients(params, image, label, settings, seed) for image, label, seed in jobs]
    arrays = {name: t.numpy() for name, t in params.items()}
    size = -(-len(jobs) // workers)
    futures = [executor.submit(_gradient_chunk, arrays, settings, jobs[i:i + size])
               for i in range(0, len(jobs), size)]
    return [result for future in futures for result in future.result()]


@contextmanager
def gradient_pool(workers: int) -> Iterator[Optional[Executor]]:
    """Process pool for per-image gradients; ``None`` when one worker suffices"""
    if workers <= 1:
        yield None
        return
    with ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("spawn")) as pool:
        yield pool


def train_step(batch: Sequence[Example], params: ModelParams, settings: Settings,
               optimizer=None, step: int = 0,
               executor: Optional[Executor] = None) -> Tuple[ModelParams, LossBreakdown]:
    """One optimizer update from the batch-mean gradient.

    Per-image gradients are reduced in batch order, so the update does not
    depend on how the forward passes were scheduled across ``executor``.
    """
    if not batch:
        raise ValueError("train_step: empty batch")
    if optimizer is None:
        optimizer = make_optimizer(settings)

    jobs = [(as_tensor(image).data, label, derive_seed(settings.seed, step, index))
            for index, (image, label) in enumerate(batch)]
    results = _batch_results(params, settings, jobs, executor, settings.worker_count)

    total: Optional[List[np.ndarray]] = None
    parts: List[LossBreakdown] = []
    for grads, breakdown in results:
        total = grads if total is None else [t + g for t, g in zip(total, grads)]
        parts.append(breakdown)

    mean_grads = [g / len(batch) for g in total]
    new_params = optimizer.step(params, mean_grads)
    summary = _mean_breakdown(parts)

    metrics.TRAIN_STEPS.inc()
    metrics.TRAIN_IMAGES.inc(len(batch))
    metrics.record_losses(summary.l_cls, summary.l_er, summary.l_total)
    return new_params, summary


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> List[List[int]]:
    order = np.random.default_rng(derive_seed(seed, epoch)).permutation(n)
    return [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]


def train(settings: Settings, manifest: DatasetManifest, run_dir: Optional[Path] = None,
          params: Optional[ModelParams] = None,
          checkpoint_every_epoch: bool = False) -> Tuple[ModelParams, List[TrainLogRecord]]:
    """Train on the ``train`` split; writes ``train_log.jsonl`` and a checkpoint"""
    run_dir = Path(run_dir or settings.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = Path(settings.checkpoint_path or run_dir / "model.ckpt")

    split = manifest.split("train")
    examples: List[Example] = [(load_image(manifest, e, settings.channels), e.label) for e in split.entries]
    if not examples:
        raise DatasetError("train: the manifest has no training entries")

    params = params if params is not None else init_params(settings)
    optimizer = make_optimizer(settings)
    history: List[TrainLogRecord] = []
    step = 0
    workers = settings.worker_count
    run_started = time.perf_counter()
    logger.info("train_started", images=len(examples), epochs=settings.epochs,
                batch_size=settings.batch_size, optimizer=settings.optimizer,
                parameters=params.num_values(), workers=workers)

    with gradient_pool(workers) as executor, \
            open(run_dir / "train_log.jsonl", "w", encoding="utf-8") as log_file:
        for epoch in range(settings.epochs):
            started = time.perf_counter()
            for indices in epoch_batches(len(examples), settings.batch_size, settings.seed, epoch):
                batch = [examples[i] for i in indices]
                params, summary = train_step(batch, params, settings, optimizer, step, executor)
                record = TrainLogRecord(step=step, epoch=epoch, **summary.model_dump())
                history.append(record)
                log_file.write(json.dumps(record.model_dump(), sort_keys=True) + "\n")
                logger.debug("train_step", step=step, l_cls=summary.l_cls,
                             l_er=summary.l_er, l_total=summary.l_total)
                step += 1
            log_file.flush()

            epoch_records = [r for r in history if r.epoch == epoch]
            logger.info("train_epoch", epoch=epoch,
                        l_total=float(np.mean([r.l_total for r in epoch_records])),
                        seconds=round(time.perf_counter() - started, 3))
            if checkpoint_every_epoch:
                save_checkpoint(params, checkpoint_path)

    save_checkpoint(params, checkpoint_path)
    logger.info("train_finished", steps=step, checkpoint=str(checkpoint_path),
                seconds=round(time.perf_counter() - run_started, 3))
    return params, history
