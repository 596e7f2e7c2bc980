import pytest

from app.core.errors import ConfigError
from app.models.ablation import AblationReport, ArmResult
from app.models.localization import LocMetrics
from app.services.ablation import (
    ARMS,
    ablation_run,
    arm_settings,
    format_report,
    gt_known_gap,
    resolve_arms,
)
from app.services.dataset import gen_dataset


def scores(value):
    return LocMetrics(top1_loc=value, top5_loc=value, gt_known_loc=value, count=4)


def test_every_arm_builds_valid_settings(small_settings):
    for name, overrides in ARMS.items():
        settings = arm_settings(small_settings, overrides, seed=3)
        assert settings.seed == 3, name
        assert not (settings.use_local_shuffle and settings.use_global_shuffle)
    assert arm_settings(small_settings, ARMS["full_mu0.5"], 0).stair_scale == 0.5


def test_resolve_arms():
    assert list(resolve_arms(None)) == list(ARMS)
    assert list(resolve_arms(["full", "baseline"])) == ["full", "baseline"]
    with pytest.raises(ConfigError):
        resolve_arms(["fulll"])


def test_mean_and_population_std():
    row = ArmResult(arm="full", seeds=[0, 1], runs=[scores(0.2), scores(0.4)])
    assert row.mean("gt_known_loc") == pytest.approx(0.3)
    assert row.std("gt_known_loc") == pytest.approx(0.1)
    single = ArmResult(arm="full", seeds=[0], runs=[scores(0.25)])
    assert single.mean("gt_known_loc") == 0.25
    assert single.std("gt_known_loc") == 0.0


def test_report_table_and_gap():
    report = AblationReport(rows=[
        ArmResult(arm="baseline", seeds=[0, 1], runs=[scores(0.5), scores(0.5)]),
        ArmResult(arm="full", seeds=[0, 1], runs=[scores(0.6), scores(0.8)]),
    ])
    table = format_report(report).splitlines()
    assert table[0].startswith("arm")
    assert table[2].startswith("baseline")
    assert "0.7000 +- 0.100" in table[3]
    assert table[-1] == "gt_known_loc gap full - baseline: +0.2000"
    assert gt_known_gap(report) == pytest.approx(0.2)
    with pytest.raises(ConfigError):
        gt_known_gap(report, arm="global")


def test_ablation_run_needs_a_seed(small_settings, tmp_path):
    with pytest.raises(ConfigError):
        ablation_run(small_settings, gen_dataset(small_settings, n_train=4, n_test=2),
                     resolve_arms(["baseline"]), [], tmp_path)


@pytest.mark.slow
def test_ablation_run_trains_every_arm_and_seed(small_settings, tmp_path):
    manifest = gen_dataset(small_settings)
    report = ablation_run(small_settings, manifest, resolve_arms(["baseline", "full"]), [0, 1],
                          tmp_path / "ablation")
    assert [row.arm for row in report.rows] == ["baseline", "full"]
    for row in report.rows:
        assert len(row.runs) == 2
        for seed in (0, 1):
            run_dir = tmp_path / "ablation" / row.arm / f"seed{seed}"
            assert (run_dir / "model.ckpt").is_file()
            assert (run_dir / "metrics.json").is_file()
