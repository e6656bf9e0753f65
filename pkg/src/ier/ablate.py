"""Ablation harness: filter combinations, identifier on/off, thresholds."""

import csv
from dataclasses import replace
from pathlib import Path

from . import metrics as M
from .pipeline import evaluate, run_stage2

FILTER_COMBOS = ((False, False), (True, False), (False, True), (True, True))


def _row(prefix, report):
    return list(prefix) + [f"{report[k]:.6f}" for k in M.REPORT_KEYS]


def ablate_filters(cfg, data_dir, out_dir):
    """Retrain stage 2 under each filter combination and evaluate it."""
    rows = []
    for silent, offscreen in FILTER_COMBOS:
        tag = f"ablate_sf{int(silent)}_of{int(offscreen)}"
        ckpt = run_stage2(cfg, data_dir, out_dir, silent_filter=silent,
                          offscreen_filter=offscreen, tag=tag)
        report, _ = evaluate(cfg, ckpt, data_dir, silent_filter=silent,
                             offscreen_filter=offscreen)
        rows.append(_row((int(silent), int(offscreen)), report))
    header = ["silent_filter", "offscreen_filter"] + list(M.REPORT_KEYS)
    return header, rows


def ablate_identifier(cfg, ckpt_path, data_dir):
    """Trained distinguishing-steps vs the zero-step baseline."""
    rows = []
    for use in (True, False):
        report, _ = evaluate(cfg, ckpt_path, data_dir, use_identifier=use)
        rows.append(_row((int(use),), report))
    return ["identifier"] + list(M.REPORT_KEYS), rows


def ablate_threshold_modes(cfg, ckpt_path, data_dir):
    rows = []
    for mode in (1, 2, 3, 4, 5):
        mode_cfg = replace(cfg, threshold_mode=mode)
        report, _ = evaluate(mode_cfg, ckpt_path, data_dir)
        rows.append(_row((mode,), report))
    return ["threshold_mode"] + list(M.REPORT_KEYS), rows


def write_table(path, header, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
