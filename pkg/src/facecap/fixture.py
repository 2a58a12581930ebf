"""Deterministic synthetic dataset for running the whole pipeline offline.

Faces are painted as rectangles with saturated red and blue channels (found by
``MarkerDetector``); the green channel carries a coarse class-specific texture
so a FER network can learn the seven expressions. Backgrounds encode scene and
activity as colour fields, and five captions per image are generated from the
same attributes.
"""

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import EMOTIONS
from .analysis import LEXICON_LABELS
from .data import write_manifest
from .features.faces import MarkerDetector, detect_faces

IMAGE_SIZE = 96
SCENES = ("park", "beach", "street", "stage", "kitchen", "room")
ACTIVITIES = (("sitting", "sits", "sit"), ("standing", "stands", "stand"), ("eating", "eats", "eat"),
              ("reading", "reads", "read"), ("singing", "sings", "sing"), ("playing", "plays", "play"),
              ("dancing", "dances", "dance"), ("walking", "walks", "walk"))
EXPRESSION_VERBS = {
    "happiness": ("smiling", "laughing"), "sadness": ("crying", "frowning"), "fear": ("screaming", "hiding"),
    "surprise": ("gasping", "staring"), "anger": ("shouting", "yelling"), "disgust": ("frowning", "grimacing"),
    "neutral": ("looking", "posing"),
}
EXPRESSION_ADJ = {"happiness": "happy", "sadness": "sad", "fear": "scared", "surprise": "surprised",
                  "anger": "angry", "disgust": "upset", "neutral": "young"}
SINGULAR = ("man", "woman", "boy", "girl")
PLURAL = {2: ("two men", "two women", "a couple"), 3: ("three people", "a group of people"),
          4: ("a group of people", "four friends")}
_SCENE_RGB = np.array([(40, 160, 60), (230, 200, 120), (110, 110, 120), (120, 30, 140), (200, 200, 190),
                       (150, 90, 40)], dtype=np.float64)
_ACT_RGB = np.array([(20, 20, 200), (200, 40, 20), (240, 240, 30), (30, 220, 220), (10, 10, 10),
                     (240, 130, 10), (120, 240, 120), (90, 50, 20)], dtype=np.float64)

# NRC-style word/emotion associations for words the fixture uses.
LEXICON = {
    "young": ("anticipation", "joy", "positive", "surprise"), "happy": ("anticipation", "joy", "positive",
                                                                        "trust"),
    "smiling": ("joy", "positive"), "laughing": ("joy", "positive"), "crying": ("negative", "sadness"),
    "sad": ("negative", "sadness"), "scared": ("fear", "negative"), "angry": ("anger", "disgust", "negative"),
    "shouting": ("anger", "negative", "surprise"), "yelling": ("anger", "fear", "negative"),
    "screaming": ("anger", "disgust", "fear", "negative", "surprise"), "singing": ("anticipation", "joy",
                                                                                   "positive", "trust"),
    "dancing": ("joy", "positive", "trust"), "upset": ("anger", "negative", "sadness"),
    "surprised": ("surprise",), "stage": ("positive",), "kitchen": ("positive",),
}


def face_templates(seed=1234):
    """One 4x4 binary texture per expression class, distinct by construction."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < len(EMOTIONS):
        t = rng.integers(0, 2, size=(4, 4))
        if 4 <= t.sum() <= 12 and all(np.abs(t - o).sum() >= 5 for o in out):
            out.append(t)
    return out


def paint_face(img, box, cls, templates, rng):
    x, y, w, h = box
    tpl = templates[cls]
    ys = (np.arange(h) * 4 // h)[:, None]
    xs = (np.arange(w) * 4 // w)[None, :]
    green = np.where(tpl[ys, xs] == 1, 200.0, 50.0) + rng.normal(0, 8.0, (h, w))
    img[y:y + h, x:x + w, 0] = 255
    img[y:y + h, x:x + w, 1] = np.clip(green, 0, 254)
    img[y:y + h, x:x + w, 2] = 255


def background(scene, activity, rng, size=IMAGE_SIZE):
    img = np.empty((size, size, 3))
    img[:] = _SCENE_RGB[scene]
    img[size // 2:] = _ACT_RGB[activity]
    img += rng.normal(0, 12.0, img.shape)
    # red capped below 255 so the marker detector never fires on background
    img[..., 0] = np.clip(img[..., 0], 0, 250)
    return np.clip(img, 0, 255)


def place_faces(n, rng, size=IMAGE_SIZE):
    boxes, tries = [], 0
    while len(boxes) < n and tries < 500:
        tries += 1
        s = int(rng.integers(16, 30))
        x, y = int(rng.integers(0, size - s)), int(rng.integers(0, size // 2 - 4))
        if y + s > size:
            continue
        if all(x + s + 2 <= bx or bx + bs + 2 <= x or y + s + 2 <= by or by + bs + 2 <= y
               for bx, by, bs, _ in boxes):
            boxes.append((x, y, s, s))
    return [(bx, by, bs, bs) for bx, by, bs, _ in boxes]


def captions_for(n_faces, classes, activity, scene, rng):
    dominant = EMOTIONS[int(np.bincount(classes, minlength=len(EMOTIONS)).argmax())]
    ing, third, base = ACTIVITIES[activity]
    place = SCENES[scene]
    expr = EXPRESSION_VERBS[dominant]
    adj = EXPRESSION_ADJ[dominant]
    if n_faces == 1:
        noun = SINGULAR[int(rng.integers(len(SINGULAR)))]
        subj, aux, present = f"a {noun}", "is", third
        adj_subj = f"a {adj} {noun}" if adj[0] not in "aeiou" else f"an {adj} {noun}"
    else:
        subj = PLURAL[n_faces][int(rng.integers(len(PLURAL[n_faces])))]
        aux, present = "are", base
        adj_subj = f"{adj} people"
    return [
        f"{subj} {aux} {ing} in the {place}",
        f"{subj} {aux} {expr[0]} and {ing} in the {place}",
        f"{adj_subj} {aux} {expr[1]} at the camera",
        f"{subj} {present} in the {place} while {expr[0]}",
        f"{subj} {aux} {expr[0]} in a {place}",
    ]


def make_fer_csv(path, templates, per_class_train=30, per_class_test=10, seed=7):
    """FER-2013-layout CSV whose crops go through the same render/detect path as the images."""
    rng = np.random.default_rng(seed)
    fer_label = {e: i for i, e in enumerate(("anger", "disgust", "fear", "happiness", "sadness",
                                              "surprise", "neutral"))}
    detector = MarkerDetector()
    rows = []
    for usage, per_class in (("Training", per_class_train), ("PrivateTest", per_class_test)):
        for k, name in enumerate(EMOTIONS):
            for _ in range(per_class):
                s = int(rng.integers(16, 30))
                img = background(int(rng.integers(len(SCENES))), int(rng.integers(len(ACTIVITIES))), rng, 48)
                img = img.astype(np.uint8)
                x, y = int(rng.integers(0, 48 - s)), int(rng.integers(0, 48 - s))
                paint_face(img, (x, y, s, s), k, templates, rng)
                crop = detect_faces(img, detector)[0]
                px = np.clip(np.rint(crop.pixels * 255), 0, 255).astype(int)
                rows.append((fer_label[name], " ".join(map(str, px.ravel())), usage))
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    # two all-black rows exercise the filter
    black = " ".join(["0"] * 48 * 48)
    rows.insert(3, (6, black, "Training"))
    rows.insert(17, (0, black, "Training"))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["emotion", "pixels", "Usage"])
        w.writerows(rows)
    return path


def write_lexicon(path):
    with open(path, "w", encoding="utf-8") as fh:
        for word in sorted(LEXICON):
            for label in LEXICON_LABELS:
                fh.write(f"{word}\t{label}\t{int(label in LEXICON[word])}\n")
    return path


def make_fixture(out_dir, n_images=50, n_distractors=6, seed=0):
    """Write images, manifest.jsonl, fer.csv and lexicon.tsv under ``out_dir``."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    templates = face_templates()
    records = []
    for i in range(n_images + n_distractors):
        image_id = f"img{i:03d}"
        scene, activity = int(rng.integers(len(SCENES))), int(rng.integers(len(ACTIVITIES)))
        img = background(scene, activity, rng)
        if i < n_images:
            n_faces = int(rng.choice([1, 1, 1, 2, 2, 3, 4]))
            boxes = place_faces(n_faces, rng)
            n_faces = len(boxes)
            base = int(rng.integers(len(EMOTIONS)))
            classes = np.array([base if rng.random() < 0.8 else int(rng.integers(len(EMOTIONS)))
                                for _ in boxes])
            img = img.astype(np.uint8)
            for box, cls in zip(boxes, classes):
                paint_face(img, box, int(cls), templates, rng)
            caps = captions_for(n_faces, classes, activity, scene, rng)
        else:
            img = img.astype(np.uint8)
            caps = captions_for(1, np.array([6]), activity, scene, rng)
        Image.fromarray(img).save(out / "images" / f"{image_id}.png")
        records.append({"image_id": image_id, "path": f"images/{image_id}.png", "captions": caps})
    write_manifest(records, out / "manifest.jsonl")
    make_fer_csv(out / "fer.csv", templates)
    write_lexicon(out / "lexicon.tsv")
    (out / "README.json").write_text(json.dumps({"images": n_images, "distractors": n_distractors,
                                                 "seed": seed}) + "\n")
    return out
