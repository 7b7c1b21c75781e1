"""Multi-scale feature extraction with a frozen torchvision backbone.

A "stage" is a spatial resolution level of the backbone: stage 1 = 1/4
input resolution, stage 2 = 1/8, stage 3 = 1/16 (stage 4, 1/32, is too
coarse to reconstruct and is excluded by contract). For the EfficientNet
family this maps to `model.features` indices {2, 3, 5}; the mapping is
recorded in the emitted manifest header. Raw stage features are dumped
unmodified - neighborhood aggregation belongs to the consumer.
"""

import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torchvision
from PIL import Image

from .datasets import walk_dataset
from .format import write_record

# features[] index per resolution stage for the EfficientNet family
_EFFICIENTNET_STAGE_NODES = {1: 2, 2: 3, 3: 5}

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractorConfig:
    dataset_root: str
    layout: str                    # mvtec | visa
    output_dir: str
    backbone: str = "efficientnet_b6"
    stages: tuple = (1, 2, 3)
    resize: int = 256
    weights: str = "pretrained"    # pretrained | none | path to a state dict

    def __post_init__(self):
        self.stages = tuple(sorted(set(int(s) for s in self.stages)))
        if not self.stages or not set(self.stages) <= {1, 2, 3}:
            raise ValueError(f"stages must be a non-empty subset of {{1,2,3}}, "
                             f"got {self.stages}")
        if self.resize < 32:
            raise ValueError(f"resize {self.resize} too small")


def load_backbone(config):
    ctor = getattr(torchvision.models, config.backbone, None)
    if ctor is None or not config.backbone.startswith("efficientnet"):
        raise ValueError(f"unsupported backbone {config.backbone!r} "
                         "(efficientnet_* family)")
    if config.weights == "pretrained":
        model = ctor(weights="DEFAULT")
    elif config.weights == "none":
        # random init is still deterministic under the fixed torch seed
        torch.manual_seed(0)
        model = ctor(weights=None)
    else:
        model = ctor(weights=None)
        model.load_state_dict(torch.load(config.weights, map_location="cpu"))
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def _prepare_image(path, resize):
    img = Image.open(path).convert("RGB").resize((resize, resize),
                                                 Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr = (arr - np.asarray(_IMAGENET_MEAN, dtype=np.float32)) \
        / np.asarray(_IMAGENET_STD, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1))[None]


def _prepare_mask(path, resize):
    # nearest-neighbour keeps the mask binary
    img = Image.open(path).convert("L").resize((resize, resize), Image.NEAREST)
    return (np.asarray(img) > 0).astype(np.uint8)


def stage_features(model, batch, stages):
    """Per-stage feature maps for one input batch."""
    nodes = {_EFFICIENTNET_STAGE_NODES[s]: s for s in stages}
    out = {}
    x = batch
    for idx, layer in enumerate(model.features):
        x = layer(x)
        if idx in nodes:
            out[nodes[idx]] = x
        if idx >= max(nodes):
            break
    return [out[s] for s in sorted(out)]


def extract_dataset(config):
    """Write one RLRF file per image plus the manifest; returns entry count."""
    entries = walk_dataset(config.dataset_root, config.layout)
    model = load_backbone(config)
    feat_dir = os.path.join(config.output_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    manifest_lines = [
        f"# backbone={config.backbone} resize={config.resize} "
        f"stages={','.join(str(s) for s in config.stages)}",
        "# stage nodes: " + ", ".join(
            f"stage{s}=features[{_EFFICIENTNET_STAGE_NODES[s]}] (1/{4 * 2 ** (s - 1)} res)"
            for s in config.stages),
    ]
    dims_seen = None
    with torch.no_grad():
        for entry in entries:
            batch = _prepare_image(entry.image_path, config.resize)
            maps = [fm[0].numpy().astype(np.float32)
                    for fm in stage_features(model, batch, config.stages)]
            dims = tuple(m.shape for m in maps)
            if dims_seen is None:
                dims_seen = dims
            elif dims != dims_seen:
                raise RuntimeError(f"inconsistent stage dims for "
                                   f"{entry.image_id}: {dims} vs {dims_seen}")
            mask = None
            if entry.mask_path is not None:
                mask = _prepare_mask(entry.mask_path, config.resize)
            rel = os.path.join("features", f"{entry.image_id}.rlrf")
            write_record(os.path.join(config.output_dir, rel),
                         image_id=entry.image_id, class_label=entry.category,
                         is_anomalous=entry.is_anomalous,
                         image_hw=(config.resize, config.resize),
                         scales=maps, pixel_mask=mask)
            manifest_lines.append(f"{rel}\t{entry.split}")
    with open(os.path.join(config.output_dir, "manifest.txt"), "w",
              encoding="utf-8") as f:
        f.write("\n".join(manifest_lines) + "\n")
    return len(entries)
