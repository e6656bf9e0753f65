"""Evaluation suite: IoU, CIoU, AUC, NMI, multi-label P/R, mAP, mappings."""

import warnings

import numpy as np

from .errors import DomainError

AUC_TAU_STEP = 0.05
REPORT_KEYS = ("iou_05", "auc", "ciou_03", "nmi", "precision", "recall", "map")
UNKNOWN_CATEGORY = -1


def binarize_prediction(sim_map, ratio=0.5):
    """Cells strictly above ratio * max(map); empty when max <= 0."""
    sim_map = np.asarray(sim_map, dtype=np.float64)
    peak = sim_map.max() if sim_map.size else 0.0
    if peak <= 0.0:
        return np.zeros(sim_map.shape, dtype=bool)
    return sim_map > ratio * peak


def boxes_to_mask(boxes, shape):
    mask = np.zeros(shape, dtype=bool)
    for y0, x0, y1, x1 in boxes:
        mask[y0 : y1 + 1, x0 : x1 + 1] = True
    return mask


def iou(pred_mask, gt_mask):
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_mask = np.asarray(gt_mask, dtype=bool)
    union = np.logical_or(pred_mask, gt_mask).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred_mask, gt_mask).sum() / union)


def ciou(per_class_iou, presence):
    presence = np.asarray(presence, dtype=np.float64)
    if presence.sum() == 0:
        raise DomainError("ciou needs at least one present class")
    per_class_iou = np.asarray(per_class_iou, dtype=np.float64)
    return float((presence * per_class_iou).sum() / presence.sum())


def auc(scores):
    """Trapezoidal area under the success-rate(tau) curve, tau in [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DomainError("auc of an empty score list")
    taus = np.arange(0.0, 1.0 + AUC_TAU_STEP / 2, AUC_TAU_STEP)
    success = np.array([(scores >= t).mean() for t in taus])
    return float(np.trapz(success, taus))


def nmi(pred, true):
    """Mutual information normalized by the geometric mean of entropies."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise DomainError("partitions of different length")
    n = len(pred)
    u_vals, u_idx = np.unique(pred, return_inverse=True)
    v_vals, v_idx = np.unique(true, return_inverse=True)
    table = np.zeros((len(u_vals), len(v_vals)))
    np.add.at(table, (u_idx, v_idx), 1.0)
    table /= n
    pu = table.sum(axis=1)
    pv = table.sum(axis=0)
    hu = -np.sum(pu[pu > 0] * np.log(pu[pu > 0]))
    hv = -np.sum(pv[pv > 0] * np.log(pv[pv > 0]))
    if hu == 0.0 or hv == 0.0:
        return 1.0 if np.array_equal(u_idx, v_idx) else 0.0
    nz = table > 0
    mi = np.sum(table[nz] * np.log(table[nz] / np.outer(pu, pv)[nz]))
    return float(max(0.0, min(1.0, mi / np.sqrt(hu * hv))))


def multilabel_pr(scores, truth, zeta=0.5):
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64) > 0
    predicted = scores > zeta
    n_pred = predicted.sum()
    n_true = truth.sum()
    hits = np.logical_and(predicted, truth).sum()
    if n_pred == 0:
        precision = 1.0 if n_true == 0 else 0.0
    else:
        precision = float(hits / n_pred)
    if n_true == 0:
        recall = 1.0 if n_pred == 0 else 0.0
    else:
        recall = float(hits / n_true)
    return precision, recall


def average_precision(scores, truth):
    """All-points AP from ranked scores for one class."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    truth = np.asarray(truth, dtype=bool)[order]
    n_pos = truth.sum()
    if n_pos == 0:
        return None
    tp = np.cumsum(truth)
    precision = tp / np.arange(1, len(truth) + 1)
    return float(np.sum(precision[truth]) / n_pos)


def map_metric(score_matrix, truth_matrix):
    """Mean AP over classes; classes without positives are skipped."""
    score_matrix = np.asarray(score_matrix, dtype=np.float64)
    truth_matrix = np.asarray(truth_matrix, dtype=np.float64) > 0
    aps = []
    for c in range(score_matrix.shape[1]):
        ap = average_precision(score_matrix[:, c], truth_matrix[:, c])
        if ap is None:
            warnings.warn(f"class {c} has no positives; skipped in mAP")
        else:
            aps.append(ap)
    if not aps:
        raise DomainError("no class with positives for mAP")
    return float(np.mean(aps))


def cluster_to_category(assignments, true_labels):
    """Majority vote per cluster; ties to the smallest category id."""
    assignments = np.asarray(assignments)
    true_labels = np.asarray(true_labels)
    k = int(assignments.max()) + 1 if len(assignments) else 0
    mapping = {}
    for j in range(k):
        members = true_labels[assignments == j]
        if len(members) == 0:
            mapping[j] = UNKNOWN_CATEGORY
            continue
        cats, counts = np.unique(members, return_counts=True)
        mapping[j] = int(cats[np.argmax(counts)])  # unique sorts ascending
    return mapping
