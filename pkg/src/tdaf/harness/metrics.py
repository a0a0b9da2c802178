"""Append-only metrics CSV and its summarizer.

``metrics.csv`` holds only seed-determined quantities so that two runs with
the same seed produce byte-identical files; wall-clock time goes to the
sibling ``timing.csv``.
"""
from __future__ import annotations

import csv
from pathlib import Path

HEADER = ("event", "epoch", "step", "lr", "loss", "train_acc", "test_acc", "test_loss")
TIMING_HEADER = ("epoch", "wall_time")


class MetricsLog:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.path = self.directory / "metrics.csv"
        self.timing_path = self.directory / "timing.csv"
        with open(self.path, "w", newline="") as f:
            csv.writer(f).writerow(HEADER)
        with open(self.timing_path, "w", newline="") as f:
            csv.writer(f).writerow(TIMING_HEADER)

    def _append(self, path: Path, row) -> None:
        with open(path, "a", newline="") as f:
            csv.writer(f).writerow(row)

    def step(self, epoch: int, step: int, lr: float, loss: float) -> None:
        self._append(self.path, ("step", epoch, step, repr(lr), repr(loss), "", "", ""))

    def epoch(self, epoch: int, step: int, lr: float, loss: float, train_acc: float, test_acc: float, test_loss: float) -> None:
        self._append(
            self.path, ("epoch", epoch, step, repr(lr), repr(loss), repr(train_acc), repr(test_acc), repr(test_loss))
        )

    def wall_time(self, epoch: int, seconds: float) -> None:
        self._append(self.timing_path, (epoch, f"{seconds:.3f}"))


def read_metrics(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Split a metrics CSV into (step rows, epoch rows) with numeric fields parsed."""
    steps, epochs = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            parsed = {k: (float(v) if v not in ("",) and k != "event" else v) for k, v in row.items()}
            parsed["epoch"] = int(parsed["epoch"])
            parsed["step"] = int(parsed["step"])
            (steps if row["event"] == "step" else epochs).append(parsed)
    return steps, epochs


def summarize(path: str | Path) -> dict:
    steps, epochs = read_metrics(path)
    out = {"steps": len(steps), "epochs": len(epochs)}
    if steps:
        out["final_loss"] = steps[-1]["loss"]
    if epochs:
        best = max(epochs, key=lambda r: r["test_acc"])
        out.update(
            final_train_acc=epochs[-1]["train_acc"],
            final_test_acc=epochs[-1]["test_acc"],
            best_test_acc=best["test_acc"],
            best_epoch=best["epoch"],
        )
    return out
