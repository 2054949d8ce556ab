"""Reproducible experiments: dataset directories, the option comparison table,
the blur-factor sweep and the multi-camera overlap scenarios.

Every function here is deterministic given its seeds, so two runs produce
byte-identical CSV output.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .classifier import Metrics, TrainConfig, split_indices, train
from .errors import InvalidDatasetError, InvalidParameterError
from .imaging import (
    FaceRegion,
    Image,
    LabeledSample,
    MaskLabel,
    SynthSpec,
    make_dataset,
    read_image,
    write_image,
)
from .pipeline import (
    DeploymentMode,
    ModelClassifier,
    make_population,
    round_robin_plan,
    simulate_overlap,
)

DEFAULT_F_VALUES = (1.0, 2.0, 3.0, 5.0, 8.0, 16.0, 32.0)
DEFAULT_SEEDS = (1, 2, 3)
DEFAULT_PER_CLASS = 500
DEFAULT_HARD_FRACTION = 0.5
TABLE_BLUR = 5.0


# ---------------------------------------------------------------------------
# CSV helpers: header row, comma separated, LF endings, lossless floats


def format_value(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(text: str):
    if text == "undefined":
        return None
    if text in ("true", "false"):
        return text == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def to_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def read_csv(text: str) -> tuple[list[str], list[list]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InvalidParameterError("empty CSV")
    return rows[0], [[parse_value(v) for v in r] for r in rows[1:]]


# ---------------------------------------------------------------------------
# dataset directories

MANIFEST = "manifest.csv"
MANIFEST_HEADER = (
    "path", "label", "x", "y", "w", "h", "image_size", "masked", "hard_case",
    "mask_color", "person_id", "clothing_color", "rng_seed",
)


def _hex(rgb) -> str:
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def _unhex(text: str):
    if len(text) != 7 or not text.startswith("#"):
        raise InvalidDatasetError(f"bad colour {text!r}")
    return tuple(int(text[i : i + 2], 16) for i in (1, 3, 5))


def write_dataset(samples: Sequence[LabeledSample], out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        rel = f"images/{i:05d}.ppm"
        write_image(s.image, out / rel)
        sp = s.spec
        rows.append(
            (rel, s.label.text, s.face.x, s.face.y, s.face.w, s.face.h, sp.image_size,
             sp.masked, sp.hard_case, _hex(sp.mask_color), sp.person_id,
             _hex(sp.clothing_color), sp.rng_seed)
        )
    (out / MANIFEST).write_text(to_csv(MANIFEST_HEADER, rows), encoding="utf-8", newline="")
    return out


def load_dataset(path) -> list[LabeledSample]:
    root = Path(path)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise InvalidDatasetError(f"{manifest} not found")
    header, rows = read_csv(manifest.read_text(encoding="utf-8"))
    if tuple(header) != MANIFEST_HEADER:
        raise InvalidDatasetError(f"unexpected manifest columns {header}")
    samples = []
    for row in rows:
        rec = dict(zip(header, row))
        spec = SynthSpec(
            image_size=rec["image_size"],
            masked=rec["masked"],
            hard_case=rec["hard_case"],
            mask_color=_unhex(rec["mask_color"]),
            person_id=str(rec["person_id"]),
            clothing_color=_unhex(rec["clothing_color"]),
            rng_seed=rec["rng_seed"],
        )
        face = FaceRegion(rec["x"], rec["y"], rec["w"], rec["h"])
        samples.append(LabeledSample(read_image(root / rec["path"]), face, MaskLabel.parse(rec["label"]), spec))
    return samples


def generate_dataset(out_dir, per_class: int, seed: int, hard_fraction: float = 0.0,
                     image_size: int = 64) -> Path:
    return write_dataset(make_dataset(per_class, seed, hard_fraction, image_size), out_dir)


# ---------------------------------------------------------------------------
# training cells


@dataclass(frozen=True)
class DataConfig:
    per_class: int = DEFAULT_PER_CLASS
    hard_fraction: float = DEFAULT_HARD_FRACTION
    image_size: int = 64
    dataset_dir: Optional[str] = None

    def samples(self, seed: int) -> list[LabeledSample]:
        if self.dataset_dir is not None:
            return load_dataset(self.dataset_dir)
        return make_dataset(self.per_class, seed, self.hard_fraction, self.image_size)


def run_cell(data: DataConfig, seed: int, blur: Optional[float], epochs: int = 15):
    """Train and score one (blur, seed) configuration. ``blur=None`` is the baseline."""
    samples = data.samples(seed)
    return train(samples, TrainConfig(epochs=epochs, seed=seed), blur=blur)


def _cell_metrics(args) -> tuple[Optional[float], int, Metrics]:
    data, seed, blur, epochs = args
    return blur, seed, run_cell(data, seed, blur, epochs).metrics


def _run_cells(cells, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_metrics, cells))
    else:
        results = [_cell_metrics(c) for c in cells]
    return sorted(results, key=lambda r: (math.inf if r[0] is None else r[0], r[1]))


# ---------------------------------------------------------------------------
# comparison table


@dataclass
class TableRow:
    mode: str
    blur: Optional[float]
    accuracy: float
    delta: float
    compliant: bool


TABLE_HEADER = ("mode", "blur_factor", "accuracy", "delta_vs_baseline", "gdpr")


def decentralized_accuracy(samples: Sequence[LabeledSample], model, seed: int, split: float = 0.75) -> float:
    """Score the held-out split through the on-edge classification path.

    The held-out people are tiled into a single camera frame, so the edge
    classifies them in one batch, in the same order as :func:`train` scores them.
    """
    _, test_idx = split_indices(len(samples), split, seed)
    held_out = [samples[i] for i in test_idx]
    image = Image(np.concatenate([s.image.pixels for s in held_out], axis=1))
    regions, offset = [], 0
    for s in held_out:
        regions.append(s.face.shifted(dx=offset))
        offset += s.image.width
    labels = ModelClassifier(model).classify(image, regions, camera_id="edge", timestamp=0)
    return sum(int(lab == s.label) for lab, s in zip(labels, held_out)) / len(held_out)


def run_table(data: DataConfig, seeds: Sequence[int] = DEFAULT_SEEDS, blur: float = TABLE_BLUR,
              epochs: int = 15) -> list[TableRow]:
    base, cent, dec = [], [], []
    for seed in sorted(seeds):
        samples = data.samples(seed)
        cfg = TrainConfig(epochs=epochs, seed=seed)
        b = train(samples, cfg)
        base.append(b.metrics.accuracy)
        dec.append(decentralized_accuracy(samples, b.model, seed, cfg.split))
        cent.append(train(samples, cfg, blur=blur).metrics.accuracy)
    mb, mc, md = (float(np.mean(v)) for v in (base, cent, dec))
    return [
        TableRow("baseline", None, mb, 0.0, False),
        TableRow("centralized", float(blur), mc, mc - mb, True),
        TableRow("decentralized", None, md, md - mb, True),
    ]


def table_csv(rows: Sequence[TableRow]) -> str:
    return to_csv(
        TABLE_HEADER,
        [(r.mode, r.blur, r.accuracy, r.delta, "compliant" if r.compliant else "non-compliant") for r in rows],
    )


def render_table(rows: Sequence[TableRow]) -> str:
    lines = [f"{'mode':<15}{'f':>6}{'accuracy':>10}{'delta':>9}  gdpr"]
    for r in rows:
        f = "-" if r.blur is None else f"{r.blur:g}"
        delta = "±0%" if r.delta == 0 else f"{100 * r.delta:+.1f}%"
        lines.append(
            f"{r.mode:<15}{f:>6}{r.accuracy:>10.3f}{delta:>9}  {'compliant' if r.compliant else 'NON-COMPLIANT'}"
        )
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# blur-factor sweep

SWEEP_HEADER = ("f", "seed", "accuracy", "tp", "tn", "fp", "fn")


@dataclass(frozen=True)
class SweepConfig:
    f_values: tuple[float, ...] = DEFAULT_F_VALUES
    per_class: int = DEFAULT_PER_CLASS
    hard_fraction: float = DEFAULT_HARD_FRACTION
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int = 15
    dataset_dir: Optional[str] = None

    def __post_init__(self):
        if not self.f_values or any(f < 1 for f in self.f_values):
            raise InvalidParameterError("f_values must be non-empty and all >= 1")
        if not self.seeds:
            raise InvalidParameterError("at least one seed is required")

    @property
    def data(self) -> DataConfig:
        return DataConfig(self.per_class, self.hard_fraction, dataset_dir=self.dataset_dir)


@dataclass
class SweepResult:
    cells: list[tuple[float, int, Metrics]]
    means: dict[float, float] = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        out = [(f, seed, m.accuracy, m.tp, m.tn, m.fp, m.fn) for f, seed, m in self.cells]
        for f in sorted(self.means):
            ms = [m for ff, _, m in self.cells if ff == f]
            out.append((f, "mean", self.means[f], sum(m.tp for m in ms), sum(m.tn for m in ms),
                        sum(m.fp for m in ms), sum(m.fn for m in ms)))
        return out

    def csv(self) -> str:
        return to_csv(SWEEP_HEADER, self.rows())


def run_sweep(config: SweepConfig = SweepConfig(), jobs: int = 1) -> SweepResult:
    f_values = sorted({float(f) for f in config.f_values})
    cells = [(config.data, s, f, config.epochs) for f in f_values for s in config.seeds]
    results = _run_cells(cells, jobs)
    means = {}
    for f in f_values:
        # fixed summation order (sorted by seed) keeps the mean bit-stable
        means[f] = float(np.mean([m.accuracy for ff, _, m in results if ff == f]))
    return SweepResult(results, means)


def run_baseline(config: SweepConfig = SweepConfig(), jobs: int = 1) -> float:
    cells = [(config.data, s, None, config.epochs) for s in config.seeds]
    return float(np.mean([m.accuracy for _, _, m in _run_cells(cells, jobs)]))


def monotonicity_inversions(means: dict[float, float]) -> list[tuple[float, float, float]]:
    """Adjacent (larger f, smaller f) pairs where accuracy goes *up* as f decreases."""
    fs = sorted(means, reverse=True)
    return [(a, b, means[b] - means[a]) for a, b in zip(fs, fs[1:]) if means[b] > means[a]]


# ---------------------------------------------------------------------------
# overlap scenarios

SCENARIOS = ("none", "masked", "unmasked")


def overlap_plan(population, cameras: int, duplicate: str = "masked", dup_cameras: int = 3):
    """Round-robin placement, optionally sending one person to ``dup_cameras`` cameras.

    ``duplicate`` picks the first masked or first unmasked person.
    """
    if duplicate not in SCENARIOS:
        raise InvalidParameterError(f"unknown scenario {duplicate!r}")
    plan = round_robin_plan(population, cameras)
    if duplicate != "none":
        want = duplicate == "masked"
        person = next((p for p in population if p.masked == want), None)
        if person is None:
            raise InvalidParameterError(f"population has no {duplicate} person to duplicate")
        plan[person.person_id] = set(range(min(dup_cameras, cameras)))
    return plan


def run_overlap(persons: int = 10, masked: int = 6, cameras: int = 3, duplicate: str = "masked",
                dup_cameras: int = 3, mode: DeploymentMode = DeploymentMode.centralized(TABLE_BLUR),
                model=None, seed: int = 0):
    population = make_population(persons, masked, seed)
    plan = overlap_plan(population, cameras, duplicate, dup_cameras)
    return simulate_overlap(population, cameras, plan, mode, model=model, seed=seed)
