"""Per-image feature artifacts: ``<id>.npz`` tensors plus a ``<id>.json`` sidecar."""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .encoding import build_facial_encoding
from .faces import detect_faces, load_image
from .fer import classify_faces, extract_face_features
from .backbones import extract_visual_features
from .types import FaceFeatureBlock, FacialEncoding, VisualFeatureMap

log = logging.getLogger(__name__)


@dataclass
class ImageFeatures:
    image_id: str
    visual: VisualFeatureMap
    faces: FaceFeatureBlock
    encoding: FacialEncoding
    boxes: list

    @property
    def n_faces(self):
        return self.faces.n_faces


def safe_name(image_id):
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in str(image_id))


def featurize_image(image, image_id, detector, fer, backbone):
    rgb = load_image(image)
    crops = detect_faces(rgb, detector, image_id=image_id)
    dists = classify_faces(fer, crops)
    return ImageFeatures(
        image_id=image_id,
        visual=extract_visual_features(backbone, rgb),
        faces=extract_face_features(fer, crops),
        encoding=build_facial_encoding(dists),
        boxes=[list(c.box) for c in crops],
    )


def save_features(feats, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = safe_name(feats.image_id)
    np.savez(out_dir / f"{stem}.npz", visual=feats.visual.feats, faces=feats.faces.feats,
             encoding=feats.encoding.onehot)
    sidecar = {"image_id": feats.image_id, "n_faces": feats.n_faces, "boxes": feats.boxes,
               "encoding_index": feats.encoding.index}
    (out_dir / f"{stem}.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return out_dir / f"{stem}.npz"


def load_features(out_dir, image_id):
    out_dir = Path(out_dir)
    stem = safe_name(image_id)
    npz, side = out_dir / f"{stem}.npz", out_dir / f"{stem}.json"
    if not npz.exists() or not side.exists():
        raise DataError("feature files missing", image_id=image_id)
    meta = json.loads(side.read_text())
    with np.load(npz) as z:
        faces = z["faces"]
        return ImageFeatures(
            image_id=meta["image_id"],
            visual=VisualFeatureMap(z["visual"]),
            faces=FaceFeatureBlock(faces, meta["n_faces"], faces.shape[1]),
            encoding=FacialEncoding(z["encoding"]),
            boxes=meta["boxes"],
        )


def extract_manifest(records, out_dir, detector, fer, backbone, workers=1, root=None):
    """Featurize every manifest record; relative paths resolve against ``root``."""
    def one(rec):
        path = Path(rec["path"])
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        feats = featurize_image(path, rec["image_id"], detector, fer, backbone)
        save_features(feats, out_dir)
        return rec["image_id"]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, records))
    return [one(r) for r in records]
