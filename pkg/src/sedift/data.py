"""Dataset persistence and assembly.

A dataset directory holds `weather.csv` (the hourly ambient record every
pair's history window resolves against), an `images/` tree of raw float32
image files, per-split JSONL manifests, and a `dataset.json` descriptor with
the generator settings and a content hash over every emitted byte. All
files are deterministic functions of (config, seed): no wall-clock time or
machine state leaks into the tree.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .core import CATEGORIES, Image, ModalPair, PipelineConfig
from .errors import DataError, require
from .radiometry import NoiseParams, SceneGenConfig, generate_scene, render_pair
from .training import TrainSample, split_dataset
from .weather import (NormalizationStats, build_global_vector, fetch_weather_text,
                      format_hour, load_history, parse_hour, parse_weather_csv,
                      synthesize_weather, weather_to_csv)

IMAGE_MAGIC = b"SDFT"
DATASET_FORMAT = 1
SPLITS = ("train", "val", "test")

DIRECTIONS = ("rgb2th", "th2rgb")
VARIANTS = ("regular-l1", "augmented-l1", "regular-l1cgan", "augmented-l1cgan")


def write_image(path, image: Image):
    """Raw float32 image container: magic, H/W/C as u32 LE, row-major data."""
    arr = np.ascontiguousarray(image.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.tobytes())


def read_image(path) -> Image:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != IMAGE_MAGIC:
        raise DataError(f"{path}: not an image file (bad magic)")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + h * w * c * 4
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw[16:], dtype="<f4").astype(np.float64).reshape(h, w, c)
    return Image(data)


@dataclass(frozen=True)
class ManifestEntry:
    scene_id: str
    category: str
    timestamp: str
    rgb_file: str
    thermal_file: str

    def to_json(self) -> str:
        return json.dumps({"scene_id": self.scene_id, "category": self.category,
                           "timestamp": self.timestamp, "rgb_file": self.rgb_file,
                           "thermal_file": self.thermal_file}, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "ManifestEntry":
        rec = json.loads(line)
        return ManifestEntry(scene_id=rec["scene_id"], category=rec["category"],
                             timestamp=rec["timestamp"], rgb_file=rec["rgb_file"],
                             thermal_file=rec["thermal_file"])


def _scene_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _render_scene(index: int, seed: int, gen_cfg: SceneGenConfig, shape,
                  category: str, timestamp: str, records: dict,
                  noise: NoiseParams) -> ModalPair:
    history = load_history(records, timestamp)
    ambient_now = records[parse_hour(timestamp)]
    scene = generate_scene(gen_cfg, shape, f"scene-{index:04d}", category,
                           timestamp, ambient_now, _scene_seed(seed, index))
    return render_pair(scene, history.values, noise)


def content_hash(root: str, rel_paths) -> str:
    """SHA-256 over sorted relative paths and their bytes."""
    digest = hashlib.sha256()
    for rel in sorted(rel_paths):
        digest.update(rel.encode("utf-8"))
        digest.update(b"\x00")
        with open(os.path.join(root, rel), "rb") as fh:
            digest.update(fh.read())
        digest.update(b"\x00")
    return digest.hexdigest()


def generate_dataset(out_dir: str, config: PipelineConfig, n_scenes: int,
                     gen_cfg: SceneGenConfig = None, noise: NoiseParams = None,
                     weather_source: str = None, workers: int = 1,
                     force: bool = False) -> dict:
    """Synthesize a full dataset tree; returns the dataset descriptor dict.

    Without a weather source a one-year synthetic hourly record is generated
    from the dataset seed; capture timestamps are drawn across that record so
    different pairs see genuinely different 72-hour histories.
    """
    require(n_scenes >= 20, "need at least 20 scenes for a 90/5/5 split")
    gen_cfg = gen_cfg if gen_cfg is not None else SceneGenConfig()
    noise = noise if noise is not None else NoiseParams()
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise DataError(f"output directory {out_dir} is not empty (use force to overwrite)")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)

    seed = config.seed
    start = datetime(2021, 1, 1, 0, 0, tzinfo=timezone.utc)
    if weather_source is None:
        records = synthesize_weather(start, 366 * 24, seed=_scene_seed(seed, 10**6))
        weather_text = weather_to_csv(records)
    else:
        weather_text = fetch_weather_text(weather_source)
        records = parse_weather_csv(weather_text)
        require(len(records) >= 2 * 72, "weather record too short to place scenes")
    with open(os.path.join(out_dir, "weather.csv"), "w", encoding="utf-8") as fh:
        fh.write(weather_text)

    hours = sorted(records)
    rng = np.random.default_rng(_scene_seed(seed, 10**6 + 1))
    usable = hours[72:]
    shape = (config.height, config.width)
    entries = []
    tasks = []
    for i in range(n_scenes):
        category = CATEGORIES[int(rng.integers(0, len(CATEGORIES)))]
        stamp = usable[int(rng.integers(0, len(usable)))]
        tasks.append((i, category, format_hour(stamp)))
    if workers > 1:
        from multiprocessing import Pool
        with Pool(workers) as pool:
            rendered = pool.starmap(
                _render_scene,
                [(i, seed, gen_cfg, shape, cat, ts, records, noise)
                 for (i, cat, ts) in tasks])
    else:
        rendered = [_render_scene(i, seed, gen_cfg, shape, cat, ts, records, noise)
                    for (i, cat, ts) in tasks]
    for (i, category, ts), pair in zip(tasks, rendered):
        rgb_rel = f"images/scene-{i:04d}.rgb.sdft"
        th_rel = f"images/scene-{i:04d}.th.sdft"
        write_image(os.path.join(out_dir, rgb_rel), pair.rgb_gray)
        write_image(os.path.join(out_dir, th_rel), pair.thermal)
        entries.append(ManifestEntry(scene_id=pair.scene_id, category=category,
                                     timestamp=ts, rgb_file=rgb_rel, thermal_file=th_rel))

    train, val, test = split_dataset(entries, seed=_scene_seed(seed, 10**6 + 2))
    split_map = {"train": train, "val": val, "test": test}
    rel_paths = ["weather.csv"]
    for split in SPLITS:
        rel = f"{split}.jsonl"
        with open(os.path.join(out_dir, rel), "w", encoding="utf-8") as fh:
            for entry in split_map[split]:
                fh.write(entry.to_json() + "\n")
        rel_paths.append(rel)
    rel_paths.extend(e.rgb_file for e in entries)
    rel_paths.extend(e.thermal_file for e in entries)

    descriptor = {
        "format": DATASET_FORMAT,
        "profile": config.profile,
        "seed": seed,
        "scene_count": n_scenes,
        "height": config.height,
        "width": config.width,
        "generator": gen_cfg.to_dict(),
        "noise": {"netd_kelvin": noise.netd_kelvin, "blur_sigma": noise.blur_sigma},
        "weather_source": weather_source or "synthetic",
        "splits": {k: len(v) for k, v in split_map.items()},
        "timestamp_range": [min(t for _, _, t in tasks), max(t for _, _, t in tasks)],
        "content_sha256": content_hash(out_dir, rel_paths),
    }
    with open(os.path.join(out_dir, "dataset.json"), "w", encoding="utf-8") as fh:
        json.dump(descriptor, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return descriptor


@dataclass
class DatasetBundle:
    """In-memory view of a dataset directory."""

    root: str
    descriptor: dict
    records: dict                 # datetime -> kelvin
    splits: dict                  # split -> list[ManifestEntry]

    def load_pair(self, entry: ManifestEntry) -> ModalPair:
        rgb = read_image(os.path.join(self.root, entry.rgb_file))
        th = read_image(os.path.join(self.root, entry.thermal_file))
        return ModalPair(rgb_gray=rgb, thermal=th, timestamp=entry.timestamp,
                         category=entry.category, scene_id=entry.scene_id)

    def history(self, entry: ManifestEntry):
        return load_history(self.records, entry.timestamp)

    def train_stats(self) -> NormalizationStats:
        histories = [self.history(e).values for e in self.splits["train"]]
        return NormalizationStats.from_histories(histories)


def load_dataset(root: str) -> DatasetBundle:
    desc_path = os.path.join(root, "dataset.json")
    try:
        with open(desc_path, "r", encoding="utf-8") as fh:
            descriptor = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset descriptor {desc_path}: {exc}") from exc
    if descriptor.get("format") != DATASET_FORMAT:
        raise DataError(f"{desc_path}: unsupported dataset format {descriptor.get('format')}")
    records = parse_weather_csv(fetch_weather_text(os.path.join(root, "weather.csv")))
    splits = {}
    for split in SPLITS:
        path = os.path.join(root, f"{split}.jsonl")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                splits[split] = [ManifestEntry.from_json(line)
                                 for line in fh if line.strip()]
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
    return DatasetBundle(root=root, descriptor=descriptor, records=records, splits=splits)


def make_samples(bundle: DatasetBundle, split: str, direction: str,
                 zero_global: bool, stats: NormalizationStats) -> list:
    """Materialize TrainSamples for one split/direction/ablation setting."""
    require(direction in DIRECTIONS, f"direction must be one of {DIRECTIONS}")
    samples = []
    for entry in bundle.splits[split]:
        pair = bundle.load_pair(entry)
        if zero_global:
            g = np.zeros(72)
        else:
            g = build_global_vector(bundle.history(entry), stats).values
        rgb = pair.rgb_gray.data
        th = pair.thermal.data
        x, y = (rgb, th) if direction == "rgb2th" else (th, rgb)
        samples.append(TrainSample(x=x, g=g, y=y, scene_id=entry.scene_id,
                                   category=entry.category))
    return samples


def variant_flags(variant: str):
    """(zero_global, use_cgan) for a training-variant name."""
    require(variant in VARIANTS, f"variant must be one of {VARIANTS}")
    return variant.startswith("regular"), variant.endswith("cgan")
