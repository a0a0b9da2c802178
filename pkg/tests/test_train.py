import numpy as np
import pytest

from tdaf.harness.attention import (
    attention_localization_score,
    export_attention,
    localization_ratio,
    quantize,
    read_pgm,
)
from tdaf.harness.audit import audit
from tdaf.harness.config import RunConfig
from tdaf.harness.metrics import HEADER, read_metrics, summarize
from tdaf.harness.train import TrainingError, build_model, evaluate, evaluate_checkpoint, load_data, load_model, train

SMALL = dict(
    backbone_stage_channels=(32, 32, 32, 32),
    data_n_train=96,
    data_n_test=64,
    train_epochs=2,
    train_batch_size=32,
)


@pytest.fixture(scope="module")
def small_cfg():
    return RunConfig().replace(**SMALL)


@pytest.fixture(scope="module")
def trained(small_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return train(small_cfg, out), out


def test_outputs_written(trained):
    res, out = trained
    for name in ("metrics.csv", "timing.csv", "final.ckpt", "best.ckpt", "config.txt"):
        assert (out / name).exists()
    steps, epochs = read_metrics(res.metrics_path)
    assert len(steps) == res.steps == 6 and len(epochs) == 2
    assert (out / "metrics.csv").read_text().splitlines()[0] == ",".join(HEADER)
    s = summarize(res.metrics_path)
    assert s["best_test_acc"] == res.best_test_acc and s["best_epoch"] == res.best_epoch


def test_same_seed_identical(small_cfg, trained, tmp_path):
    res, out = trained
    again = train(small_cfg, tmp_path)
    assert (tmp_path / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()
    assert again.step_losses[:10] == res.step_losses[:10]


def test_best_checkpoint_reproduces_logged_accuracy(small_cfg, trained):
    res, out = trained
    _, test_ds = load_data(small_cfg)
    acc, _ = evaluate_checkpoint(small_cfg, out / "best.ckpt", test_ds)
    assert acc == res.best_test_acc


def test_eval_idempotent(small_cfg):
    model = build_model(small_cfg)
    _, test_ds = load_data(small_cfg)
    assert evaluate(model, test_ds, small_cfg) == evaluate(model, test_ds, small_cfg)


def test_fresh_model_near_chance():
    cfg = RunConfig().replace(data_n_train=16, data_n_test=1000)
    _, test_ds = load_data(cfg)
    acc, _ = evaluate(build_model(cfg), test_ds, cfg)
    assert abs(acc - 0.25) <= 0.05


def test_zero_lr_keeps_parameters(small_cfg):
    cfg = small_cfg.replace(optim_lr=0.0, optim_weight_decay=0.0, train_epochs=1)
    model = build_model(cfg)
    before = {k: v.copy() for k, v in model.state_dict().items() if "running" not in k}
    train(cfg, model=model)
    after = model.state_dict()
    for k, v in before.items():
        np.testing.assert_array_equal(after[k], v)


def test_non_finite_loss_aborts(small_cfg):
    cfg = small_cfg.replace(optim_lr=1e30, optim_momentum=0.0, train_epochs=1)
    with pytest.raises(TrainingError, match=r"step \d+.*lr.*max \|grad\|"):
        with np.errstate(all="ignore"):
            train(cfg)


def test_incompatible_checkpoint(small_cfg, trained):
    _, out = trained
    with pytest.raises(TrainingError, match="incompatible"):
        load_model(small_cfg.replace(flows_mode="baseline"), out / "best.ckpt")
    with pytest.raises(TrainingError, match="body.stages.1.conv0.weight"):
        load_model(RunConfig(), out / "best.ckpt")


class TestAttentionExport:
    def test_files_and_geometry(self, small_cfg, trained, tmp_path):
        res, _ = trained
        _, test_ds = load_data(small_cfg)
        paths = export_attention(res.model, test_ds.images[0], small_cfg, tmp_path)
        assert sorted(p.name for p in paths) == [f"attn_f{n}_s{l}.pgm" for n, l in ((2, 1), (2, 2), (3, 1), (3, 2), (3, 3))]
        assert read_pgm(tmp_path / "attn_f2_s1.pgm").shape[0] * 2 == read_pgm(tmp_path / "attn_f3_s1.pgm").shape[0]
        index = (tmp_path / "index.csv").read_text().splitlines()
        assert index[0] == "file,flow,stage,height,width" and len(index) == 6
        assert res.model.training

    def test_quantization(self):
        assert quantize(np.array([0.5, 0.0, 1.0, 0.25])).tolist() == [128, 0, 255, 64]

    def test_non_attention_rejected(self, small_cfg, tmp_path):
        cfg = small_cfg.replace(flows_mode="multiscale_concat")
        with pytest.raises(ValueError):
            export_attention(build_model(cfg), np.zeros((3, 32, 32), np.uint8), cfg, tmp_path)


class TestLocalization:
    def test_uniform_is_one(self):
        maps = np.full((3, 16, 16), 0.5)
        np.testing.assert_array_equal(localization_ratio(maps, np.array([[0, 0], [8, 16], [24, 24]])), 1.0)

    def test_concentrated(self):
        maps = np.zeros((1, 16, 16))
        maps[0, 4:8, 8:12] = 1
        assert localization_ratio(maps, np.array([[8, 16]]))[0] == pytest.approx(16.0)

    def test_untrained_near_one(self):
        cfg = RunConfig().replace(data_n_train=16, data_n_test=200)
        _, test_ds = load_data(cfg)
        score = attention_localization_score(build_model(cfg), test_ds, cfg)
        assert abs(score - 1.0) <= 0.1


def test_audit():
    a = audit(RunConfig())
    assert a.consistent
    assert a.attention > 0 and a.total == a.backbone + a.attention + a.head
    assert a.overhead_pct == pytest.approx(100 * (a.total - a.baseline_total) / a.baseline_total)
    base = audit(RunConfig().replace(flows_mode="baseline"))
    assert base.total == base.baseline_total and base.consistent
    cat = audit(RunConfig().replace(flows_mode="multiscale_concat"))
    assert cat.consistent and cat.attention == 0
