"""Corpus evaluation, CSV/JSON reports and the DOA-error sweep."""

import csv
import io as _io
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import ConfigurationError
from .metrics import CAP_DB, MetricResult, capped
from .pipeline import run_bg_tse, run_pipeline

log = logging.getLogger(__name__)

CSV_COLUMNS = ("scene_id", "system", "sdr_db", "si_sdr_db", "si_sdri_db", "flags")
METRICS = ("sdr_db", "si_sdr_db", "si_sdri_db")
BACKEND_SUFFIX = "/bf"


def _fmt(value):
    return "" if value is None else f"{value:.6f}"


@dataclass
class EvalRow:
    scene_id: str
    system: str
    sdr_db: float | None
    si_sdr_db: float | None
    si_sdri_db: float | None
    flags: tuple = ()
    tags: dict = field(default_factory=dict)

    @classmethod
    def from_metrics(cls, scene_id, system, result, tags=None):
        return cls(scene_id, system, capped(result.sdr_db), capped(result.si_sdr_db),
                   capped(result.si_sdri_db), tuple(result.flags), dict(tags or {}))

    @classmethod
    def failed(cls, scene_id, system, tags=None):
        return cls(scene_id, system, None, None, None, ("failed",), dict(tags or {}))

    @property
    def ok(self):
        return "failed" not in self.flags

    def csv_record(self):
        return [self.scene_id, self.system, _fmt(self.sdr_db), _fmt(self.si_sdr_db),
                _fmt(self.si_sdri_db), ";".join(self.flags)]


def _summary(values):
    if not values:
        return {"mean": 0.0, "median": 0.0}
    return {"mean": float(np.mean(values)), "median": float(np.median(values))}


@dataclass
class EvalReport:
    """Per-scene rows keyed by (scene id, system) plus per-system aggregates.

    Metrics are stored capped at +-200 dB; rows with infinite scores carry a flag.
    """

    rows: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)

    def systems(self):
        seen = []
        for row in self.rows:
            if row.system not in seen:
                seen.append(row.system)
        return seen

    def get(self, scene_id, system):
        for row in self.rows:
            if row.scene_id == scene_id and row.system == system:
                return row
        raise KeyError((scene_id, system))

    def values(self, system, metric="si_sdri_db"):
        return [getattr(r, metric) for r in self.rows if r.system == system and r.ok]

    def aggregates(self):
        out = {}
        for system in self.systems():
            rows = [r for r in self.rows if r.system == system]
            good = [r for r in rows if r.ok]
            entry = {"count": len(good), "failed": len(rows) - len(good),
                     "flagged": sum(1 for r in good if r.flags)}
            for metric in METRICS:
                entry[metric] = _summary([getattr(r, metric) for r in good])
            out[system] = entry
        return out

    def to_csv(self, path=None):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow(row.csv_record())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def summary(self):
        return {
            "columns": list(CSV_COLUMNS),
            "cap_db": CAP_DB,
            "aggregates": self.aggregates(),
            "failures": dict(sorted(self.failures.items())),
            "tags": {f"{r.scene_id}|{r.system}": r.tags for r in self.rows if r.tags},
        }

    def to_json(self, path=None):
        text = json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        def num(v):
            return float(v) if v != "" else None

        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != CSV_COLUMNS:
                raise ConfigurationError(f"{path}: expected columns {CSV_COLUMNS}, got {header}")
            for rec in reader:
                flags = tuple(f for f in rec[5].split(";") if f)
                rows.append(EvalRow(rec[0], rec[1], num(rec[2]), num(rec[3]), num(rec[4]), flags))
        return cls(rows)


def _check_systems(systems):
    systems = list(systems)
    labels = [s.label for s in systems]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"system names must be unique, got {labels}")
    return systems


def _scene_tags(manifest, row):
    tags = {"angular_spacing": round(row.angular_spacing, 6)}
    try:
        with open(manifest.path(row.spec_path), encoding="utf-8") as fh:
            spec = json.load(fh)
        tags["t60"] = spec["room"]["t60"]
        tags["sir_db"] = spec["sir_db"]
    except (OSError, KeyError, ValueError):
        pass
    return tags


def evaluate_corpus(manifest, systems, out=None, estimates_dir=None, wav_format="float32"):
    """Run every system on every scene and score the reference-channel outputs.

    Scenes are processed in scene-id order. A scene that cannot be read or
    processed yields ``failed`` rows and evaluation continues. With ``out`` the
    report is written as ``report.csv`` and ``report.json``; with
    ``estimates_dir`` the estimates are written as WAV files.
    """
    from .io import write_wav

    systems = _check_systems(systems)
    report = EvalReport()
    for row in sorted(manifest.rows, key=lambda r: r.scene_id):
        tags = _scene_tags(manifest, row)
        try:
            scene = manifest.load_scene(row)
            geometry = row.array
        except Exception as exc:  # unreadable scene: record and continue
            log.warning("scene %s: %s", row.scene_id, exc)
            report.failures[row.scene_id] = str(exc)
            for cfg in systems:
                report.rows.append(EvalRow.failed(row.scene_id, cfg.label, tags))
                if cfg.backend_enabled:
                    report.rows.append(EvalRow.failed(row.scene_id, cfg.label + BACKEND_SUFFIX, tags))
            continue
        for cfg in systems:
            names = [cfg.label] + ([cfg.label + BACKEND_SUFFIX] if cfg.backend_enabled else [])
            try:
                outputs = run_pipeline(scene.mixture, geometry, row.target_doa, cfg, scene,
                                       scene.sample_rate)
                ref = cfg.ref_channel
                results = [MetricResult.compute(scene.target_image[ref], outputs[key],
                                                scene.mixture[ref])
                           for key in ("xhat", "xhat_bf")[:len(names)]]
            except Exception as exc:
                log.warning("scene %s, system %s: %s", row.scene_id, cfg.label, exc)
                report.failures[f"{row.scene_id}|{cfg.label}"] = str(exc)
                report.rows.extend(EvalRow.failed(row.scene_id, n, tags) for n in names)
                continue
            for name, result in zip(names, results):
                report.rows.append(EvalRow.from_metrics(row.scene_id, name, result, tags))
            if estimates_dir is not None:
                scene_dir = os.path.join(estimates_dir, row.scene_id)
                os.makedirs(scene_dir, exist_ok=True)
                for name, key in zip(names, ("xhat", "xhat_bf")):
                    fname = name.replace("/", "_").replace("+", "_") + ".wav"
                    write_wav(os.path.join(scene_dir, fname), outputs[key], scene.sample_rate,
                              wav_format)
    if out is not None:
        os.makedirs(out, exist_ok=True)
        report.to_csv(os.path.join(out, "report.csv"))
        report.to_json(os.path.join(out, "report.json"))
    return report


def _bin_labels(threshold):
    return f"ge{threshold:g}", f"lt{threshold:g}"


@dataclass
class SweepResult:
    """Per-scene SI-SDRi for each DOA error, binned by angular spacing."""

    threshold: float
    errors: list
    scenes: list = field(default_factory=list)  # (scene_id, angular_spacing, {error: si_sdri})
    failures: dict = field(default_factory=dict)

    def bin_of(self, spacing):
        ge, lt = _bin_labels(self.threshold)
        return ge if spacing >= self.threshold else lt

    def table(self):
        """Rows of ``(error_deg, bin, mean_si_sdri_db, count)``."""
        rows = []
        for e in self.errors:
            for label in _bin_labels(self.threshold):
                vals = [s[e] for _, spacing, s in self.scenes if self.bin_of(spacing) == label]
                rows.append((e, label, float(np.mean(vals)) if vals else None, len(vals)))
        return rows

    def mean(self, error, label):
        for e, lab, m, _ in self.table():
            if e == error and lab == label:
                return m
        raise KeyError((error, label))

    def to_csv(self, path=None):
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("doa_error_deg", "bin", "mean_si_sdri_db", "count"))
        for e, label, m, n in self.table():
            writer.writerow((f"{e:g}", label, _fmt(m), n))
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text

    def to_data(self):
        """Plot-ready series, one per bin."""
        series = {}
        for e, label, m, n in self.table():
            s = series.setdefault(label, {"doa_error_deg": [], "mean_si_sdri_db": [], "count": []})
            s["doa_error_deg"].append(e)
            s["mean_si_sdri_db"].append(m)
            s["count"].append(n)
        return {"threshold_deg": self.threshold, "series": series,
                "scenes": [{"scene_id": sid, "angular_spacing": sp,
                            "si_sdri_db": {f"{e:g}": v for e, v in vals.items()}}
                           for sid, sp, vals in self.scenes],
                "failures": dict(sorted(self.failures.items()))}


def doa_error_sweep(manifest, cfg, error_grid, as_threshold=15.0):
    """Mean SI-SDRi of ``cfg`` under azimuth errors of the steering DOA.

    Each nonzero error ``e`` is applied as ``+e`` and ``-e`` and the two scores
    are averaged. Results are split at ``as_threshold`` degrees of angular
    spacing into ``ge<thr>`` and ``lt<thr>`` bins.
    """
    errors = [float(e) for e in error_grid]
    if not errors:
        raise ConfigurationError("DOA error grid is empty")
    if not all(math.isfinite(e) for e in errors):
        raise ConfigurationError("DOA error grid must be finite")
    result = SweepResult(float(as_threshold), errors)
    ref = cfg.ref_channel
    for row in sorted(manifest.rows, key=lambda r: r.scene_id):
        try:
            scene = manifest.load_scene(row)
            geometry = row.array
            x = scene.target_image[ref]
            mix = scene.mixture[ref]
            scores = {}
            for e in errors:
                deltas = (0.0,) if e == 0 else (e, -e)
                vals = []
                for d in deltas:
                    est = run_bg_tse(scene.mixture, geometry, row.target_doa.rotated(d), cfg, scene,
                                     scene.sample_rate)
                    vals.append(capped(MetricResult.compute(x, est, mix).si_sdri_db))
                scores[e] = float(np.mean(vals))
        except Exception as exc:
            log.warning("scene %s: %s", row.scene_id, exc)
            result.failures[row.scene_id] = str(exc)
            continue
        result.scenes.append((row.scene_id, row.angular_spacing, scores))
    return result
