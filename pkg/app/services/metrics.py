from prometheus_client import Counter, Gauge, Histogram

TRAIN_STEPS = Counter("scmn_train_steps_total", "Optimizer steps taken")
TRAIN_IMAGES = Counter("scmn_train_images_total", "Images consumed by training")
LOSS = Gauge("scmn_loss", "Latest batch-mean loss term", ["term"])

SINKHORN_ITERATIONS = Histogram(
    "scmn_sinkhorn_iterations",
    "Sinkhorn iterations per solve",
    buckets=(1, 5, 10, 25, 50, 100, 200, 500, 1000),
)
SINKHORN_MARGINAL_ERROR = Gauge("scmn_sinkhorn_marginal_error", "Marginal violation of the latest plan")

INFERENCE_SECONDS = Histogram("scmn_inference_seconds", "Single-image localization latency")
EVALUATED_IMAGES = Counter("scmn_evaluated_images_total", "Images scored by evaluation")


def record_losses(l_cls: float, l_er: float, l_total: float) -> None:
    LOSS.labels(term="cls").set(l_cls)
    LOSS.labels(term="er").set(l_er)
    LOSS.labels(term="total").set(l_total)
