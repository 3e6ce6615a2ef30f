"""Whole-image classification, accuracy metrics, median filtering and sweeps."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .model import ModelConfig, Network, build, forward
from .polsar_io import CoherencyImage, LabelMap
from .preprocess import (build_dataset, extract_patches, normalize_channels, reflect_index,
                         stratified_split)
from .seeding import derive_seed
from .train import TrainConfig, fit


@dataclass
class EvalReport:
    confusion: np.ndarray           # rows: predicted class, columns: reference class
    oa: float
    aa: float
    kappa: float
    per_class_accuracy: np.ndarray

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def to_text(self) -> str:
        n = len(self.confusion)
        width = max(8, len(str(int(self.confusion.max(initial=0)))) + 2)
        lines = ["confusion matrix (rows = predicted class, columns = reference class)",
                 "pred\\ref" + "".join(f"{c:>{width}}" for c in range(1, n + 1))]
        for i, row in enumerate(self.confusion, start=1):
            lines.append(f"{i:>8}" + "".join(f"{int(v):>{width}}" for v in row))
        lines.append("")
        for i, acc in enumerate(self.per_class_accuracy, start=1):
            lines.append(f"class {i} accuracy = {100 * acc:.2f}")
        lines.append(f"OA = {100 * self.oa:.2f}")
        lines.append(f"AA = {100 * self.aa:.2f}")
        lines.append(f"kappa = {100 * self.kappa:.2f}")
        return "\n".join(lines) + "\n"


def metrics_from_confusion(confusion) -> EvalReport:
    """OA, AA and kappa from a predicted-by-reference count matrix.

    Per-class accuracy divides the diagonal by the predicted-class row sum;
    an empty row scores 0. Kappa is 1 when chance agreement is already 1
    and the maps agree, otherwise 0 in that degenerate case.
    """
    conf = np.asarray(confusion, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(conf).astype(np.float64)
    rows = conf.sum(axis=1).astype(np.float64)
    cols = conf.sum(axis=0).astype(np.float64)
    oa = diag.sum() / total
    per_class = np.divide(diag, rows, out=np.zeros_like(diag), where=rows > 0)
    p_e = float((rows * cols).sum()) / float(total) ** 2
    if p_e < 1.0:
        kappa = (oa - p_e) / (1.0 - p_e)
    else:
        kappa = 1.0 if oa == 1.0 else 0.0
    return EvalReport(conf, float(oa), float(per_class.mean()), float(kappa), per_class)


def confusion_matrix(pred, ref, num_classes):
    pred = np.asarray(pred, dtype=np.int64).ravel()
    ref = np.asarray(ref, dtype=np.int64).ravel()
    keep = ref > 0
    pred, ref = pred[keep], ref[keep]
    if np.any(pred < 1) or np.any(pred > num_classes):
        raise ValueError("prediction missing or out of range at a labeled reference pixel")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (pred - 1, ref - 1), 1)
    return conf


def compute_metrics(pred: LabelMap, ref: LabelMap) -> EvalReport:
    if pred.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {pred.shape} vs {ref.shape}")
    n = max(pred.num_classes, ref.num_classes)
    return metrics_from_confusion(confusion_matrix(pred.labels, ref.labels, n))


def predict_patches(net: Network, data: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class ids (1-based, ties to the lowest id) for a patch stack."""
    out = np.empty(len(data), dtype=np.int64)
    for s in range(0, len(data), batch_size):
        out[s:s + batch_size] = np.argmax(forward(net, data[s:s + batch_size]), axis=1) + 1
    return out


def classify_image(net: Network, image: CoherencyImage, window: int | None = None,
                   batch_size: int = 256) -> LabelMap:
    """Label every pixel of an already-normalized image."""
    window = net.config.window if window is None else window
    if window != net.config.window:
        raise ValueError(f"window {window} does not match model window {net.config.window}")
    h, w = image.height, image.width
    rows, cols = np.divmod(np.arange(h * w), w)
    labels = np.empty(h * w, dtype=np.int64)
    for s in range(0, h * w, batch_size):
        patches = extract_patches(image, rows[s:s + batch_size], cols[s:s + batch_size], window)
        labels[s:s + batch_size] = np.argmax(forward(net, patches), axis=1) + 1
    return LabelMap(labels.reshape(h, w), net.config.num_classes)


def median_filter_classmap(label_map: LabelMap) -> LabelMap:
    """3x3 median (5th of 9 order statistics) with mirrored borders."""
    lab = label_map.labels.astype(np.int64)
    h, w = lab.shape
    ri = reflect_index(np.arange(-1, h + 1), h)
    ci = reflect_index(np.arange(-1, w + 1), w)
    padded = lab[ri[:, None], ci[None, :]]
    windows = sliding_window_view(padded, (3, 3)).reshape(h, w, 9)
    median = np.partition(windows, 4, axis=-1)[..., 4]
    return LabelMap(median, label_map.num_classes)


# --- experiments --------------------------------------------------------------

@dataclass
class TrialResult:
    oa: float
    report: EvalReport
    network: Network
    log: object


def run_trial(image: CoherencyImage, label_map: LabelMap, *, ratio: float, window: int,
              seed: int, train_config: TrainConfig | None = None,
              model_config: ModelConfig | None = None, normalized: bool = False,
              batch_size: int = 256) -> TrialResult:
    """Split, train and score on the held-out test pixels."""
    if not normalized:
        image = normalize_channels(image)
    train_config = replace(train_config or TrainConfig(), seed=seed)
    base = model_config or ModelConfig(num_classes=label_map.num_classes)
    model_config = replace(base, window=window, num_classes=label_map.num_classes)
    split = stratified_split(label_map, ratio, seed)
    train, _ = build_dataset(image, label_map, replace(split, test={}), window)
    net, log = fit(build(model_config, seed), train, train_config)
    coords = np.concatenate([split.test[c] for c in sorted(split.test)])
    truth = label_map.labels[coords[:, 0], coords[:, 1]].astype(np.int64)
    pred = np.empty(len(coords), dtype=np.int64)
    for s in range(0, len(coords), batch_size):
        block = coords[s:s + batch_size]
        pred[s:s + batch_size] = predict_patches(
            net, extract_patches(image, block[:, 0], block[:, 1], window), batch_size)
    report = metrics_from_confusion(confusion_matrix(pred, truth, label_map.num_classes))
    return TrialResult(report.oa, report, net, log)


@dataclass
class SweepRow:
    value: float
    mean_oa: float
    std_oa: float
    oas: tuple


def _sweep(image, label_map, values, trials, make_kwargs, seed, **kwargs):
    if trials < 1:
        raise ValueError("trials must be >= 1")
    image = normalize_channels(image)
    rows = []
    for i, value in enumerate(values):
        oas = []
        for t in range(trials):
            trial_seed = derive_seed(seed, "trial", i, t)
            res = run_trial(image, label_map, seed=trial_seed, normalized=True,
                            **make_kwargs(value), **kwargs)
            oas.append(res.oa)
        rows.append(SweepRow(value, float(np.mean(oas)), float(np.std(oas)), tuple(oas)))
    return rows


def window_sweep(image, label_map, windows, trials=1, *, ratio=0.01, seed=0, **kwargs):
    """Mean and population std of test OA for each window size."""
    for w in windows:
        if w < 3 or w % 2 == 0:
            raise ValueError(f"window must be odd and >= 3, got {w}")
    return _sweep(image, label_map, windows, trials,
                  lambda w: {"window": int(w), "ratio": ratio}, seed, **kwargs)


def ratio_sweep(image, label_map, ratios, trials=1, *, window=13, seed=0, **kwargs):
    """Mean and population std of test OA for each training fraction."""
    return _sweep(image, label_map, ratios, trials,
                  lambda r: {"window": window, "ratio": float(r)}, seed, **kwargs)


def sweep_csv(rows) -> str:
    return "value,mean_oa,std_oa\n" + "".join(
        f"{r.value:g},{r.mean_oa:.6f},{r.std_oa:.6f}\n" for r in rows)
