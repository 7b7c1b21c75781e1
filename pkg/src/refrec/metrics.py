"""AUROC, evaluation over datasets, and the ablation harness."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import scoring
from .autodiff import no_grad
from .errors import DataError, MetricUndefinedError
from .features import aggregate_record, map_from_tokens, tokens_from_map
from .model import VARIANT_ORDER, ablation_variant, init_reference
from .training import fit


def tied_ranks(values):
    """Average ranks (1-based) with ties sharing their mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    boundaries = np.flatnonzero(np.diff(sorted_vals) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(values)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def auroc(scores, labels):
    """Mann-Whitney AUROC with average-rank tie handling."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError(f"scores {scores.shape} vs labels {labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError(
            f"undefined metric: need both classes, got {n_pos} positives "
            f"and {n_neg} negatives")
    ranks = tied_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# dataset evaluation

@dataclass
class ClassMetrics:
    image_auroc: float | None
    pixel_auroc: float | None
    records: int


@dataclass
class EvalReport:
    image_auroc: float
    pixel_auroc: float
    per_class: dict
    record_count: int

    def class_means(self):
        ia = [m.image_auroc for m in self.per_class.values() if m.image_auroc is not None]
        pa = [m.pixel_auroc for m in self.per_class.values() if m.pixel_auroc is not None]
        return (float(np.mean(ia)) if ia else None,
                float(np.mean(pa)) if pa else None)


def score_record(record, model, bank, smooth_window=4):
    """(score_map, image_score) for one record; inference is noise-free."""
    windows = [s.agg_window for s in model.config.scales]
    org_maps = aggregate_record(record, windows)
    tokens = [tokens_from_map(fm) for fm in org_maps]
    with no_grad():
        outs = model.forward(tokens, bank)
    rec_maps = [map_from_tokens(outs[j].data, (s.height, s.width))
                for j, s in enumerate(model.config.scales)]
    smap = scoring.score_map(rec_maps, org_maps, record.image_hw)
    return smap, scoring.image_score(smap, smooth_window)


def evaluate(test_records, model, bank, smooth_window=4, threads=1):
    """Image and pixel AUROC over a test split, with per-class breakdown."""
    if not test_records:
        raise DataError("empty test split")
    missing = [r.image_id for r in test_records
               if r.is_anomalous and r.pixel_mask is None]
    if missing:
        raise DataError(f"anomalous records without pixel masks: {missing}")

    with no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                scored = list(pool.map(
                    lambda r: score_record(r, model, bank, smooth_window),
                    test_records))
        else:
            scored = [score_record(r, model, bank, smooth_window)
                      for r in test_records]

    image_scores = np.array([s for _, s in scored])
    image_labels = np.array([1 if r.is_anomalous else 0 for r in test_records])
    pixel_scores = np.concatenate([smap.ravel() for smap, _ in scored])
    pixel_labels = np.concatenate([
        (r.pixel_mask.ravel().astype(np.int8) if r.pixel_mask is not None
         else np.zeros(r.image_hw[0] * r.image_hw[1], dtype=np.int8))
        for r in test_records])

    per_class = {}
    for cls in sorted({r.class_label for r in test_records}):
        idx = [i for i, r in enumerate(test_records) if r.class_label == cls]
        labels = image_labels[idx]
        try:
            ia = auroc(image_scores[idx], labels)
        except MetricUndefinedError:
            ia = None
        px_scores = np.concatenate([scored[i][0].ravel() for i in idx])
        px_labels = np.concatenate([
            (test_records[i].pixel_mask.ravel().astype(np.int8)
             if test_records[i].pixel_mask is not None
             else np.zeros(test_records[i].image_hw[0] * test_records[i].image_hw[1],
                           dtype=np.int8))
            for i in idx])
        try:
            pa = auroc(px_scores, px_labels)
        except MetricUndefinedError:
            pa = None
        per_class[cls] = ClassMetrics(ia, pa, len(idx))

    return EvalReport(
        image_auroc=auroc(image_scores, image_labels),
        pixel_auroc=auroc(pixel_scores, pixel_labels),
        per_class=per_class,
        record_count=len(test_records))


def format_report(report):
    lines = ["class                image-AUROC  pixel-AUROC  records",
             "-" * 56]
    for cls, m in report.per_class.items():
        ia = f"{m.image_auroc:.4f}" if m.image_auroc is not None else "  n/a "
        pa = f"{m.pixel_auroc:.4f}" if m.pixel_auroc is not None else "  n/a "
        lines.append(f"{cls:<20} {ia:>11}  {pa:>11}  {m.records:>7}")
    lines.append("-" * 56)
    mia, mpa = report.class_means()
    ia = f"{mia:.4f}" if mia is not None else "  n/a "
    pa = f"{mpa:.4f}" if mpa is not None else "  n/a "
    lines.append(f"{'class mean':<20} {ia:>11}  {pa:>11}")
    lines.append(f"{'overall':<20} {report.image_auroc:>11.4f}  "
                 f"{report.pixel_auroc:>11.4f}  {report.record_count:>7}")
    return "\n".join(lines) + "\n"


def report_kv_lines(report):
    lines = [f"image_auroc={report.image_auroc!r}",
             f"pixel_auroc={report.pixel_auroc!r}",
             f"record_count={report.record_count}"]
    mia, mpa = report.class_means()
    if mia is not None:
        lines.append(f"class_mean.image_auroc={mia!r}")
    if mpa is not None:
        lines.append(f"class_mean.pixel_auroc={mpa!r}")
    for cls, m in report.per_class.items():
        if m.image_auroc is not None:
            lines.append(f"class.{cls}.image_auroc={m.image_auroc!r}")
        if m.pixel_auroc is not None:
            lines.append(f"class.{cls}.pixel_auroc={m.pixel_auroc!r}")
        lines.append(f"class.{cls}.records={m.records}")
    return lines


# ---------------------------------------------------------------------------
# ablation harness

def run_ablation(train_records, test_records, config, tconfig,
                 variants=VARIANT_ORDER, smooth_window=4, threads=1,
                 progress=None):
    """Train and evaluate each block-structure variant with one shared seed
    so the differences are architectural. Rows come back in table order."""
    results = []
    for variant in variants:
        model = ablation_variant(config, variant)
        bank = init_reference(config)
        fit(train_records, model, bank, tconfig)
        report = evaluate(test_records, model, bank, smooth_window, threads)
        results.append((variant, report))
        if progress is not None:
            progress(variant, report)
    return results


def format_ablation_table(results):
    lines = ["variant          image-AUROC  pixel-AUROC",
             "-" * 42]
    for variant, report in results:
        lines.append(f"{variant:<16} {report.image_auroc:>11.4f}  "
                     f"{report.pixel_auroc:>11.4f}")
    return "\n".join(lines) + "\n"
