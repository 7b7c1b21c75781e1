"""Walkers for the MVTec-AD and VisA (1-class protocol) directory layouts.

Both layouts share the structure
    <root>/<category>/train/good/*.ext
    <root>/<category>/test/<defect-or-good>/*.ext
    <root>/<category>/ground_truth/<defect>/<stem><suffix>.png
with mvtec using "_mask" ground-truth suffixes and VisA none.
"""

import os
from dataclasses import dataclass

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

LAYOUTS = {
    "mvtec": {"mask_suffix": "_mask"},
    "visa": {"mask_suffix": ""},
}


@dataclass
class ImageEntry:
    category: str
    split: str            # train | test
    is_anomalous: bool
    image_path: str
    mask_path: str | None
    image_id: str


def _is_image(name):
    return name.lower().endswith(IMAGE_EXTS)


def _find_mask(gt_dir, defect, stem, suffix):
    folder = os.path.join(gt_dir, defect)
    if not os.path.isdir(folder):
        return None
    for name in sorted(os.listdir(folder)):
        base, _ = os.path.splitext(name)
        if base == stem + suffix and _is_image(name):
            return os.path.join(folder, name)
    return None


def walk_dataset(root, layout):
    """Yield ImageEntry for every image of every category under root."""
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {sorted(LAYOUTS)}, got {layout!r}")
    suffix = LAYOUTS[layout]["mask_suffix"]
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root} does not exist")
    categories = sorted(d for d in os.listdir(root)
                        if os.path.isdir(os.path.join(root, d)))
    if not categories:
        raise FileNotFoundError(f"no category directories under {root}")
    entries = []
    for cat in categories:
        cat_dir = os.path.join(root, cat)
        train_good = os.path.join(cat_dir, "train", "good")
        test_dir = os.path.join(cat_dir, "test")
        if not os.path.isdir(train_good) or not os.path.isdir(test_dir):
            raise FileNotFoundError(
                f"{cat_dir} does not match the {layout} layout "
                f"(need train/good and test/)")
        for name in sorted(os.listdir(train_good)):
            if _is_image(name):
                stem = os.path.splitext(name)[0]
                entries.append(ImageEntry(
                    category=cat, split="train", is_anomalous=False,
                    image_path=os.path.join(train_good, name), mask_path=None,
                    image_id=f"{cat}_train_good_{stem}"))
        gt_dir = os.path.join(cat_dir, "ground_truth")
        for defect in sorted(os.listdir(test_dir)):
            defect_dir = os.path.join(test_dir, defect)
            if not os.path.isdir(defect_dir):
                continue
            for name in sorted(os.listdir(defect_dir)):
                if not _is_image(name):
                    continue
                stem = os.path.splitext(name)[0]
                anomalous = defect != "good"
                mask = None
                if anomalous:
                    mask = _find_mask(gt_dir, defect, stem, suffix)
                    if mask is None:
                        raise FileNotFoundError(
                            f"no ground-truth mask for anomalous test image "
                            f"{os.path.join(defect_dir, name)}")
                entries.append(ImageEntry(
                    category=cat, split="test", is_anomalous=anomalous,
                    image_path=os.path.join(defect_dir, name), mask_path=mask,
                    image_id=f"{cat}_test_{defect}_{stem}"))
    return entries
