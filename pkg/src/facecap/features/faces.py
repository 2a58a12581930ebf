"""Face detection and FER-compatible preprocessing.

Detectors are plain callables ``detector(rgb) -> [(x, y, w, h), ...]`` so that
tests and the synthetic fixture can swap in deterministic stubs.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import EnvironmentUnavailable, InputError
from .types import FACE_SIZE, FaceCrop


def load_image(image):
    """Return an ``H x W x 3`` uint8 array from a path, bytes, PIL image or array."""
    if isinstance(image, np.ndarray):
        arr = image
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] not in (3, 4):
            raise InputError(f"cannot interpret array of shape {image.shape} as an image")
        arr = arr[:, :, :3]
        if arr.dtype != np.uint8:
            if np.issubdtype(arr.dtype, np.floating) and arr.size and arr.max() <= 1.0:
                arr = arr * 255.0
            arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
        return arr
    try:
        if isinstance(image, Image.Image):
            pil = image
        elif isinstance(image, (bytes, bytearray)):
            pil = Image.open(io.BytesIO(image))
        else:
            pil = Image.open(Path(image))
        return np.asarray(pil.convert("RGB"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise InputError(f"cannot decode image {image!r:.80}: {exc}") from exc


def to_gray(image):
    """Luminance in [0, 1] as float64; 2-D input is treated as gray already."""
    arr = np.asarray(image)
    scale = 255.0 if arr.dtype == np.uint8 else 1.0
    arr = arr.astype(np.float64) / scale
    if arr.ndim == 2:
        return arr
    return arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114


def resize_gray(gray, size=FACE_SIZE):
    if gray.shape == (size, size):
        return gray.copy()
    pil = Image.fromarray(gray.astype(np.float32), mode="F")
    return np.asarray(pil.resize((size, size), Image.BILINEAR), dtype=np.float64)


def _clip_box(box, height, width):
    x, y, w, h = (int(round(v)) for v in box)
    x0, y0 = max(0, x), max(0, y)
    x1, y1 = min(width, x + w), min(height, y + h)
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1 - x0, y1 - y0)


def detect_faces(image, detector, image_id=""):
    """Detect faces and return 48x48 grayscale crops, largest box first."""
    raw = image
    if isinstance(image, np.ndarray) and image.ndim == 2:
        gray_full = to_gray(image)
        rgb = load_image(image)
    else:
        rgb = load_image(raw)
        gray_full = to_gray(rgb)
    height, width = gray_full.shape
    boxes = [_clip_box(b, height, width) for b in detector(rgb)]
    boxes = [b for b in boxes if b is not None]
    # stable sort keeps detector order among equal areas
    boxes.sort(key=lambda b: -(b[2] * b[3]))
    crops = []
    for x, y, w, h in boxes:
        patch = resize_gray(gray_full[y:y + h, x:x + w])
        crops.append(FaceCrop(image_id, (x, y, w, h), np.clip(patch, 0.0, 1.0)))
    return crops


class FixedBoxDetector:
    """Returns the same boxes for every image."""

    def __init__(self, boxes):
        self.boxes = [tuple(b) for b in boxes]

    def __call__(self, rgb):
        return list(self.boxes)


class MarkerDetector:
    """Finds rectangles painted with full red and full blue channels.

    The synthetic fixture draws faces this way; the green channel carries the
    face texture. Connected regions smaller than ``min_size`` pixels per side
    are ignored.
    """

    def __init__(self, min_size=4):
        self.min_size = min_size

    def __call__(self, rgb):
        from scipy import ndimage

        mask = (rgb[..., 0] == 255) & (rgb[..., 2] == 255)
        labels, _ = ndimage.label(mask)
        boxes = []
        for sl in ndimage.find_objects(labels):
            if sl is None:
                continue
            ys, xs = sl
            w, h = xs.stop - xs.start, ys.stop - ys.start
            if w >= self.min_size and h >= self.min_size:
                boxes.append((xs.start, ys.start, w, h))
        return boxes


class HaarCascadeDetector:
    """OpenCV frontal-face Haar cascade."""

    def __init__(self, scale_factor=1.1, min_neighbors=5):
        try:
            import cv2
            cv2.CascadeClassifier, cv2.data  # some wheels ship without the objdetect module
        except (ImportError, AttributeError) as exc:
            raise EnvironmentUnavailable("face detector 'haar' needs opencv-python") from exc
        path = Path(cv2.data.haarcascades) / "haarcascade_frontalface_default.xml"
        self._cascade = cv2.CascadeClassifier(str(path))
        if self._cascade.empty():
            raise EnvironmentUnavailable(f"face detector 'haar': cannot load {path}")
        self._cv2 = cv2
        self.scale_factor = scale_factor
        self.min_neighbors = min_neighbors

    def __call__(self, rgb):
        gray = self._cv2.cvtColor(rgb, self._cv2.COLOR_RGB2GRAY)
        found = self._cascade.detectMultiScale(gray, self.scale_factor, self.min_neighbors)
        return [tuple(int(v) for v in b) for b in found]


class DlibCnnDetector:
    """dlib's CNN face detector (mmod_human_face_detector.dat)."""

    def __init__(self, model_path, upsample=1):
        try:
            import dlib
        except ImportError as exc:
            raise EnvironmentUnavailable("face detector 'dlib' needs the dlib package") from exc
        if not Path(model_path).exists():
            raise EnvironmentUnavailable(f"face detector 'dlib': model file {model_path} not found")
        self._net = dlib.cnn_face_detection_model_v1(str(model_path))
        self.upsample = upsample

    def __call__(self, rgb):
        out = []
        for det in self._net(rgb, self.upsample):
            r = det.rect
            out.append((r.left(), r.top(), r.width(), r.height()))
        return out


def get_detector(name, **kwargs):
    """Instantiate a detector backend by name: marker, haar, dlib."""
    if name == "marker":
        return MarkerDetector(**kwargs)
    if name == "haar":
        return HaarCascadeDetector(**kwargs)
    if name == "dlib":
        return DlibCnnDetector(**kwargs)
    raise EnvironmentUnavailable(f"unknown face detector backend {name!r}")
