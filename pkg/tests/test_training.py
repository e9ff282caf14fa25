import pandas as pd
import pytest
import torch

from adapters.dataset import PolypDataset
from adapters.polyp import scan_dataset
from common.errors import DataError, NonFiniteLossError
from conftest import write_dataset
from models.base import get_model
from oracles import MaskInImageOracle, NaNModel, write_mask_in_image
from training.loop import TrainConfig, mean_dice, validate, train
from training.schedule import one_cycle_lr


def _items(tmp_path, n=4, seed=0):
    write_dataset(str(tmp_path), "Kvasir", n, seed=seed)
    return scan_dataset(str(tmp_path), "Kvasir")


def test_train_config_validation():
    with pytest.raises(Exception):
        TrainConfig(img_size=100)
    with pytest.raises(Exception):
        TrainConfig(unknown_key=1)
    assert TrainConfig().lr == 1e-4 and TrainConfig().batch_size == 16


def test_validate_with_oracle(tmp_path):
    write_mask_in_image(str(tmp_path), "Kvasir", 4)
    ds = PolypDataset(scan_dataset(str(tmp_path), "Kvasir"), size=64)
    assert validate(MaskInImageOracle(), ds, 0.5) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        validate(MaskInImageOracle(), ds, 0.0)


def test_mean_dice_empty():
    with pytest.raises(DataError):
        mean_dice([], [])


def test_non_finite_loss_names_batch(tmp_path):
    items = _items(tmp_path)
    cfg = TrainConfig(epochs=1, batch_size=2, img_size=64, aug_p=0.0)
    with pytest.raises(NonFiniteLossError) as exc:
        train(NaNModel(), items[:2], items[2:], cfg)
    assert exc.value.batch_id == 0


def test_empty_sets(tmp_path):
    items = _items(tmp_path)
    cfg = TrainConfig(epochs=1, batch_size=2, img_size=64)
    with pytest.raises(DataError):
        train(get_model("tiny-enformer-lite"), [], items, cfg)
    with pytest.raises(DataError):
        train(get_model("tiny-enformer-lite"), items, [], cfg)


def test_history_checkpoints_and_resume(tmp_path):
    items = _items(tmp_path / "data", n=6)
    out = tmp_path / "run"
    recipe = {"name": "tiny-enformer-lite", "img_size": 64}
    cfg = TrainConfig(epochs=2, batch_size=4, img_size=64, aug_p=0.5, seed=3)
    result = train(get_model("tiny-enformer-lite"), items[:4], items[4:], cfg, str(out), "h", recipe)

    history = pd.read_csv(out / "history.csv")
    assert list(history["epoch"]) == [1, 2]
    assert (out / "last.enfw").exists() and (out / "best.json").exists()
    assert result.last.epoch == 2
    assert result.best.val_dice == history["val_dice"].max()
    # one step per epoch: the recorded lr is the scheduler value at that step
    assert list(history["lr"]) == pytest.approx([one_cycle_lr(s, 2, cfg.lr) for s in (0, 1)])

    cfg3 = cfg.model_copy(update={"epochs": 3})
    resumed = train(get_model("tiny-enformer-lite"), items[:4], items[4:], cfg3, str(out), "h", recipe,
                    resume_from=str(out / "last"))
    assert list(resumed.history["epoch"]) == [1, 2, 3]
    assert resumed.last.epoch == 3
    assert resumed.history["lr"].iloc[-1] == pytest.approx(one_cycle_lr(2, 3, cfg.lr))


@pytest.mark.slow
def test_tiny_lite_overfits_eight_samples(tmp_path):
    items = _items(tmp_path, n=8, seed=5)
    torch.manual_seed(0)
    model = get_model("tiny-enformer-lite", img_size=64)
    cfg = TrainConfig(epochs=200, batch_size=8, img_size=64, aug_p=0.0, lr=1e-3, seed=0)
    train(model, items, items, cfg)
    assert validate(model, PolypDataset(items, 64), 0.5) >= 0.95


@pytest.mark.slow
def test_loss_decreases_across_seeds(tmp_path):
    items = _items(tmp_path, n=8, seed=6)
    decreased = 0
    for seed in range(5):
        cfg = TrainConfig(epochs=20, batch_size=8, img_size=64, aug_p=0.0, lr=1e-3, seed=seed)
        result = train(get_model("tiny-enformer-lite", img_size=64), items, items, cfg)
        losses = result.history["train_loss"]
        decreased += int(losses.iloc[-1] < losses.iloc[0])
    assert decreased >= 4
