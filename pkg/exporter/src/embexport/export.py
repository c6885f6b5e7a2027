"""Run a vision backbone over an image folder and write EMB1 features.

Images are expected as <root>/<class-folder>/<image>; the folder name
becomes the label. Rows are written in lexicographic file-path order and
inference is seeded, so re-running an export produces identical bytes.

Features are taken pre-classifier (globally pooled) and stored
unnormalized — normalization is the consuming pipeline's job.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

from .emb1 import write_emb1

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}


class ExportError(Exception):
    pass


def _resnet(ctor):
    def build():
        net = ctor(weights=None)
        net.fc = torch.nn.Identity()
        return net
    return build


def _vit():
    net = models.vit_b_16(weights=None)
    net.heads = torch.nn.Identity()
    return net


# Allow-listed backbones: name -> (constructor with the classifier removed,
# input resolution). Weights are randomly initialized under a fixed seed
# unless a state-dict file is supplied, so exports stay deterministic even
# without downloaded weight files.
BACKBONES = {
    "resnet18": (_resnet(models.resnet18), 224),
    "resnet50": (_resnet(models.resnet50), 224),
    "vit_b_16": (_vit, 224),
}


@dataclass
class ExportSpec:
    image_root: str
    backbone: str = "resnet18"
    out_path: str = "features.emb1"
    batch_size: int = 32
    device: str = "cpu"
    weights_path: str | None = None  # optional state dict for the backbone
    seed: int = 0

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ExportError(f"backbone {self.backbone!r} not in allow-list "
                              f"{sorted(BACKBONES)}")
        if self.batch_size < 1:
            raise ExportError("batch_size must be positive")


def _collect(root: Path):
    """(path, folder-name) pairs in lexicographic path order, plus the label map."""
    if not root.is_dir():
        raise ExportError(f"image root {root} is not a directory")
    pairs = [(p, p.parent.name) for p in sorted(root.rglob("*"))
             if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES]
    if not pairs:
        raise ExportError(f"no images under {root}")
    label_map = {name: i for i, name in enumerate(sorted({n for _, n in pairs}))}
    return pairs, label_map


def _build_model(spec: ExportSpec) -> torch.nn.Module:
    torch.manual_seed(spec.seed)
    ctor, _ = BACKBONES[spec.backbone]
    net = ctor()
    if spec.weights_path:
        state = torch.load(spec.weights_path, map_location="cpu", weights_only=True)
        net.load_state_dict(state, strict=False)
    net.eval()
    return net.to(spec.device)


def export(spec: ExportSpec) -> dict:
    """Export all readable images; returns the manifest dict that was written.

    Unreadable images are skipped with a warning and recorded in the
    manifest under "skipped".
    """
    root = Path(spec.image_root)
    pairs, label_map = _collect(root)
    _, resolution = BACKBONES[spec.backbone]
    prep = transforms.Compose([
        transforms.Resize((resolution, resolution)),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ])

    tensors, labels, kept, skipped = [], [], [], []
    for path, folder in pairs:
        try:
            with Image.open(path) as img:
                tensors.append(prep(img.convert("RGB")))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
            skipped.append(str(path.relative_to(root)))
            continue
        labels.append(label_map[folder])
        kept.append(str(path.relative_to(root)))
    if not tensors:
        raise ExportError("every image was unreadable")

    model = _build_model(spec)
    feats = []
    with torch.inference_mode():
        for i in range(0, len(tensors), spec.batch_size):
            batch = torch.stack(tensors[i:i + spec.batch_size]).to(spec.device)
            feats.append(model(batch).cpu().numpy())
    features = np.concatenate(feats).astype(np.float32)

    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_emb1(features, np.asarray(labels, dtype=np.int64), out)
    manifest = {
        "backbone": spec.backbone,
        "count": len(kept),
        "dim": int(features.shape[1]),
        "labels": label_map,
        "files": kept,
        "skipped": skipped,
    }
    with open(out.with_suffix(".manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
