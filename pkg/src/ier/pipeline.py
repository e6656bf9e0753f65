"""End-to-end orchestration: synthesis, staged training, evaluation.

This is the layer the CLI wraps; tests drive it directly.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics as M
from . import referrer, tensorio, world
from .encoders import EncoderParams, encode_audio, encode_visual, init_params, train_stage1
from .errors import UsageError
from .identifier import (
    StepParams,
    class_scores,
    distinguishing_step,
    init_step_params,
    train_identifier,
)
from .numerics import localization_map
from .prototypes import PrototypeBank, build_prototypes, object_feature
from .referrer import infer_batch, train_stage2

SINGLE = "single"
UNCONSTRAINED = "unconstrained"


@dataclass
class DatasetItem:
    item_id: str
    kind: str
    visual: np.ndarray
    audio: np.ndarray
    labels: np.ndarray
    boxes: dict        # class id -> list of boxes
    offscreen: list    # class ids


def synth_dataset(cfg, out_dir):
    """Write X^s and X^u with manifest + tensor files; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = world.make_class_table(cfg.k_true, cfg.c_in, cfg.a_in, cfg.seed)
    items = []
    for i in range(cfg.n_single):
        pair = world.synthesize_single_source(
            table, seed=cfg.seed + 1000 + i, sigma=cfg.sigma,
            grid_h=cfg.grid_h, grid_w=cfg.grid_w)
        items.append((f"s{i:05d}", SINGLE, pair))
    for i in range(cfg.n_unconstrained):
        pair = world.synthesize_unconstrained(
            table, seed=cfg.seed + 500000 + i, sigma=cfg.sigma,
            volume_ratio_max=cfg.volume_ratio_max,
            grid_h=cfg.grid_h, grid_w=cfg.grid_w)
        items.append((f"u{i:05d}", UNCONSTRAINED, pair))
    manifest = {"config": cfg.to_dict(), "items": []}
    for item_id, kind, pair in items:
        vis_path = f"{item_id}_visual.iert"
        aud_path = f"{item_id}_audio.iert"
        tensorio.write_tensor(out_dir / vis_path, pair.visual)
        tensorio.write_tensor(out_dir / aud_path, pair.audio)
        boxes = {}
        for obj in pair.objects:
            boxes.setdefault(str(obj.class_id), []).append(list(obj.box))
        manifest["items"].append({
            "id": item_id,
            "kind": kind,
            "visual": vis_path,
            "audio": aud_path,
            "labels": [int(b) for b in pair.labels],
            "boxes": boxes,
            "offscreen": [int(c) for c, _v in pair.offscreen],
        })
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_dataset(data_dir):
    data_dir = Path(data_dir)
    with open(data_dir / "manifest.json") as fh:
        manifest = json.load(fh)
    items = []
    for entry in manifest["items"]:
        items.append(DatasetItem(
            item_id=entry["id"],
            kind=entry["kind"],
            visual=tensorio.read_tensor(data_dir / entry["visual"]),
            audio=tensorio.read_tensor(data_dir / entry["audio"]),
            labels=np.array(entry["labels"], dtype=np.float64),
            boxes={int(k): [tuple(b) for b in v]
                   for k, v in entry["boxes"].items()},
            offscreen=list(entry["offscreen"]),
        ))
    return manifest, items


def split_items(items):
    singles = [it for it in items if it.kind == SINGLE]
    mixed = [it for it in items if it.kind == UNCONSTRAINED]
    return singles, mixed


# ---------------------------------------------------------------------------
# checkpoints

ENCODER_KEYS = ("w_vis", "b_vis", "w_mid", "b_mid", "w_aud", "b_aud")


def save_checkpoint(path, cfg, params, p_v=None, p_a=None, assignments=None,
                    true_labels=None, step_params=None):
    tensors = {k: getattr(params, k) for k in ENCODER_KEYS}
    if p_v is not None:
        tensors["proto_v"] = p_v.vectors
        tensors["proto_a"] = p_a.vectors
        tensors["assignments"] = np.asarray(assignments, dtype=np.int64)
        tensors["true_labels"] = np.asarray(true_labels, dtype=np.int64)
        tensors["step_w"] = step_params.weights
        tensors["step_b"] = step_params.biases
    tensorio.write_checkpoint(path, tensorio.config_hash(cfg.to_dict()),
                              tensors)


def load_checkpoint(path):
    cfg_hash, tensors = tensorio.read_checkpoint(path)
    params = EncoderParams(**{k: np.array(tensors[k], dtype=np.float64)
                              for k in ENCODER_KEYS})
    extras = {}
    if "proto_v" in tensors:
        extras["p_v"] = PrototypeBank("visual", np.array(tensors["proto_v"]))
        extras["p_a"] = PrototypeBank("audio", np.array(tensors["proto_a"]))
        extras["assignments"] = np.array(tensors["assignments"])
        extras["true_labels"] = np.array(tensors["true_labels"])
        extras["step_params"] = StepParams(np.array(tensors["step_w"]),
                                           np.array(tensors["step_b"]))
    return cfg_hash, params, extras


def _write_log(path, rows, header):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# staged training


def run_stage1(cfg, data_dir, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _manifest, items = load_dataset(data_dir)
    singles, _ = split_items(items)
    if not singles:
        raise UsageError("stage 1 needs single-source scenes in the dataset")
    params = init_params(cfg.c_in, cfg.a_in, cfg.c, cfg.c_m, seed=cfg.seed)
    params, history = train_stage1(params, singles, epochs=cfg.stage1_epochs,
                                   batch=cfg.batch, seed=cfg.seed + 1,
                                   lr=cfg.lr)
    path = out_dir / "stage1.ckpt"
    save_checkpoint(path, cfg, params)
    _write_log(out_dir / "stage1_log.csv",
               [(e, f"{l:.6f}", "", "") for e, l in enumerate(history)],
               ("epoch", "loss", "p", "m"))
    return path


def run_identifier(cfg, data_dir, out_dir):
    out_dir = Path(out_dir)
    stage1 = out_dir / "stage1.ckpt"
    if not stage1.exists():
        raise UsageError("identifier stage requires stage1.ckpt; "
                         "run `ier train --stage 1` first")
    _hash, params, _extras = load_checkpoint(stage1)
    _manifest, items = load_dataset(data_dir)
    singles, _ = split_items(items)
    p_v, p_a, assignments, _feats = build_prototypes(
        params, singles, cfg.k, seed=cfg.seed + 2)
    step_params = init_step_params(cfg.k, cfg.c, cfg.c_m)
    step_params, params, p_v, p_a, history = train_identifier(
        params, step_params, singles, assignments, p_v, p_a,
        epochs=cfg.identifier_epochs, seed=cfg.seed + 3, lr=cfg.lr,
        train_audio=cfg.train_audio_in_identifier)
    true_labels = [int(np.argmax(s.labels)) for s in singles]
    path = out_dir / "identifier.ckpt"
    save_checkpoint(path, cfg, params, p_v, p_a, assignments, true_labels,
                    step_params)
    _write_log(out_dir / "identifier_log.csv",
               [(e, f"{l:.6f}", f"{p:.3f}", m)
                for e, (l, p, m) in enumerate(history)],
               ("epoch", "loss", "p", "m"))
    return path


def run_stage2(cfg, data_dir, out_dir, silent_filter=True,
               offscreen_filter=True, tag="stage2"):
    out_dir = Path(out_dir)
    ident = out_dir / "identifier.ckpt"
    if not ident.exists():
        raise UsageError("stage 2 requires identifier.ckpt; "
                         "run `ier train --stage identifier` first")
    _hash, params, extras = load_checkpoint(ident)
    _manifest, items = load_dataset(data_dir)
    _, mixed = split_items(items)
    if not mixed:
        raise UsageError("stage 2 needs unconstrained scenes in the dataset")
    params, history = train_stage2(
        params, extras["step_params"], extras["p_v"], extras["p_a"], mixed,
        epochs=cfg.stage2_epochs, seed=cfg.seed + 4, lr=cfg.lr,
        batch=cfg.batch, threshold_mode=cfg.threshold_mode,
        silent_filter=silent_filter, offscreen_filter=offscreen_filter)
    path = out_dir / f"{tag}.ckpt"
    save_checkpoint(path, cfg, params, extras["p_v"], extras["p_a"],
                    extras["assignments"], extras["true_labels"],
                    extras["step_params"])
    _write_log(out_dir / f"{tag}_log.csv",
               [(e, f"{l:.6f}", "", "") for e, l in enumerate(history)],
               ("epoch", "loss", "p", "m"))
    return path


# ---------------------------------------------------------------------------
# evaluation


def _n_workers():
    try:
        return max(1, int(os.environ.get("IER_THREADS", "1")))
    except ValueError:
        return 1


def category_score_vector(p_a, f_a, delta, mapping, n_categories):
    """Max remapped similarity over the clusters mapped to each category."""
    per_cluster = class_scores(p_a, f_a, delta)
    out = np.zeros(n_categories)
    for j, score in enumerate(per_cluster):
        cat = mapping.get(j, M.UNKNOWN_CATEGORY)
        if 0 <= cat < n_categories:
            out[cat] = max(out[cat], score)
    return out


def evaluate(cfg, ckpt_path, data_dir, silent_filter=True,
             offscreen_filter=True, use_identifier=True):
    """Full metric report plus per-sample localization rows."""
    _hash, params, extras = load_checkpoint(ckpt_path)
    if "p_v" not in extras:
        raise UsageError("evaluation needs an identifier-stage checkpoint")
    p_v, p_a = extras["p_v"], extras["p_a"]
    step_params = extras["step_params"]
    if not use_identifier:
        step_params = init_step_params(p_a.k, p_a.vectors.shape[1],
                                       params.w_mid.shape[0])
    mapping = M.cluster_to_category(extras["assignments"],
                                    extras["true_labels"])
    _manifest, items = load_dataset(data_dir)
    singles, mixed = split_items(items)
    n_cat = cfg.k_true
    grid_shape = (cfg.grid_h, cfg.grid_w)

    # single-source IoU via the plain audio-visual localization map
    single_ious = []
    for item in singles:
        f_v = encode_visual(params, item.visual)
        f_a, _ = encode_audio(params, item.audio)
        pred = M.binarize_prediction(localization_map(f_v, f_a),
                                     ratio=cfg.iou_binarize_ratio)
        cls = int(np.argmax(item.labels))
        gt = M.boxes_to_mask(item.boxes.get(cls, []), grid_shape)
        single_ious.append(M.iou(pred, gt))

    # clustering quality on single-source scenes in this dataset
    if singles:
        feats = []
        for item in singles:
            f_v = encode_visual(params, item.visual)
            f_a, _ = encode_audio(params, item.audio)
            feats.append(object_feature(f_v, f_a))
        d2 = (np.sum(np.stack(feats) ** 2, axis=1)[:, None]
              - 2.0 * np.stack(feats) @ p_v.vectors.T
              + np.sum(p_v.vectors ** 2, axis=1)[None, :])
        pred_clusters = np.argmin(d2, axis=1)
        true = np.array([int(np.argmax(item.labels)) for item in singles])
        nmi_value = M.nmi(pred_clusters, true)
    else:
        nmi_value = 0.0

    # unconstrained localization + audio classification
    per_sample = []
    ciou_scores = []
    score_rows = []
    truth_rows = []
    workers = _n_workers()
    batches = [mixed[i : i + cfg.batch] for i in range(0, len(mixed), cfg.batch)]

    def process(batch_items):
        outs = infer_batch(params, step_params, p_v, p_a, batch_items,
                           threshold_mode=cfg.threshold_mode,
                           batch=cfg.batch, silent_filter=silent_filter,
                           offscreen_filter=offscreen_filter)
        rows = []
        for item, out in zip(batch_items, outs):
            per_cat_iou = np.zeros(n_cat)
            for cat in range(n_cat):
                if item.labels[cat] <= 0:
                    continue
                maps = [out.av_maps[j] for j in range(p_a.k)
                        if mapping.get(j) == cat]
                if maps:
                    combined = np.max(np.stack(maps), axis=0)
                    pred = M.binarize_prediction(
                        combined, ratio=cfg.iou_binarize_ratio)
                else:
                    pred = np.zeros(grid_shape, dtype=bool)
                gt = M.boxes_to_mask(item.boxes.get(cat, []), grid_shape)
                per_cat_iou[cat] = M.iou(pred, gt)
            sample_ciou = M.ciou(per_cat_iou, item.labels)
            rows.append((item, sample_ciou, per_cat_iou, out))
        return rows

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batch_rows = list(pool.map(process, batches))
    else:
        batch_rows = [process(b) for b in batches]

    for rows in batch_rows:
        for item, sample_ciou, per_cat_iou, out in rows:
            ciou_scores.append(sample_ciou)
            per_sample.append((item.item_id, sample_ciou, per_cat_iou))
            f_a, f_m = encode_audio(params, item.audio)
            delta = distinguishing_step(step_params, f_m)
            score_rows.append(category_score_vector(
                p_a, f_a, delta, mapping, n_cat))
            truth_rows.append(item.labels)

    precisions, recalls = [], []
    for scores, truth in zip(score_rows, truth_rows):
        p, r = M.multilabel_pr(scores, truth, zeta=cfg.zeta)
        precisions.append(p)
        recalls.append(r)

    report = {
        "iou_05": float(np.mean([s >= 0.5 for s in single_ious]))
        if single_ious else 0.0,
        "auc": M.auc(ciou_scores) if ciou_scores else 0.0,
        "ciou_03": float(np.mean([s >= 0.3 for s in ciou_scores]))
        if ciou_scores else 0.0,
        "nmi": nmi_value,
        "precision": float(np.mean(precisions)) if precisions else 0.0,
        "recall": float(np.mean(recalls)) if recalls else 0.0,
        "map": M.map_metric(np.stack(score_rows), np.stack(truth_rows))
        if score_rows else 0.0,
    }
    return report, per_sample


def write_report(report, per_sample, out_dir, n_categories):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.json", "w") as fh:
        json.dump({k: report[k] for k in M.REPORT_KEYS}, fh, indent=1,
                  sort_keys=True)
    rows = []
    for item_id, sample_ciou, per_cat in per_sample:
        rows.append([item_id, f"{sample_ciou:.6f}"]
                    + [f"{v:.6f}" for v in per_cat])
    _write_log(out_dir / "per_sample.csv", rows,
               ["sample_id", "ciou"] + [f"iou_{c}" for c in range(n_categories)])


def export_maps(cfg, ckpt_path, data_dir, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _hash, params, extras = load_checkpoint(ckpt_path)
    if "p_v" not in extras:
        raise UsageError("map export needs an identifier-stage checkpoint")
    _manifest, items = load_dataset(data_dir)
    outs = infer_batch(params, extras["step_params"], extras["p_v"],
                       extras["p_a"], items, threshold_mode=cfg.threshold_mode,
                       batch=cfg.batch)
    for item, out in zip(items, outs):
        for j in range(out.av_maps.shape[0]):
            stem = out_dir / f"{item.item_id}_class{j:02d}"
            tensorio.write_tensor(f"{stem}.iert", out.av_maps[j])
            tensorio.write_pgm(f"{stem}.pgm", out.av_maps[j])
    return len(items)
