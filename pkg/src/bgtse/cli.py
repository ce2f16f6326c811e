"""Command-line tool: ``bgtse {simulate,run,eval,sweep-doa,report}``.

Exit codes: 0 success, 1 some scenes failed, 2 configuration or usage error
(including refusal to overwrite existing outputs).
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .dsp import ConfigurationError
from .evaluation import EvalReport, doa_error_sweep, evaluate_corpus
from .io import Manifest, ManifestRow, ToolConfig, save_json, write_wav
from .pipeline import ExtractorSpec
from .roomsim import sample_scene, simulate_scene

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("bgtse")


class OutputExistsError(ConfigurationError):
    """Outputs already exist and ``--overwrite`` was not given."""


def _guard(paths, overwrite):
    existing = [p for p in paths if os.path.exists(p)]
    if existing and not overwrite:
        raise OutputExistsError(f"refusing to overwrite {existing[0]} (pass --overwrite)")


def scene_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def cmd_simulate(config, n_scenes, seed, out_dir, overwrite=False):
    """Sample, simulate and write ``n_scenes`` scenes; the manifest is written last."""
    if n_scenes < 0:
        raise ConfigurationError("n_scenes must be non-negative")
    manifest_path = os.path.join(out_dir, "manifest.json")
    _guard([manifest_path], overwrite)
    os.makedirs(out_dir, exist_ok=True)
    ranges = replace(config.ranges, sample_rate=config.sample_rate)
    rows = []
    for i in range(n_scenes):
        scene_id = f"scene_{i:04d}"
        spec = sample_scene(scene_seed(seed, i), ranges)
        sig = simulate_scene(spec)
        rel = os.path.join("scenes", scene_id)
        os.makedirs(os.path.join(out_dir, rel), exist_ok=True)
        files = {name: os.path.join(rel, f"{name}.wav") for name in ("mixture", "target", "interferer")}
        spec_path = os.path.join(rel, "spec.json")
        save_json(os.path.join(out_dir, spec_path), spec.to_dict())
        for name, wave in (("mixture", sig.mixture), ("target", sig.target_image),
                           ("interferer", sig.interferer_image)):
            write_wav(os.path.join(out_dir, files[name]), wave, spec.sample_rate, config.wav_format)
        rows.append(ManifestRow(scene_id, spec_path, files["mixture"], files["target"],
                                files["interferer"], tuple(map(tuple, spec.geometry.to_list())),
                                spec.target_doa, spec.interferer_doa))
        log.info("simulated %s (t60 %.2f s, AS %.1f deg)", scene_id, spec.room.t60,
                 spec.angular_spacing)
    manifest = Manifest(os.path.abspath(out_dir), rows, int(config.sample_rate))
    manifest.save(manifest_path)
    return manifest


def cmd_run(manifest, config, out_dir, overwrite=False, write_estimates=True):
    """Process every scene with every configured system; writes estimates and reports."""
    _guard([os.path.join(out_dir, "report.csv"), os.path.join(out_dir, "report.json")], overwrite)
    estimates = os.path.join(out_dir, "estimates") if write_estimates else None
    return evaluate_corpus(manifest, config.all_systems(), out_dir, estimates, config.wav_format)


def cmd_eval(manifest, config, out_dir, overwrite=False):
    """Like :func:`cmd_run` but only the report is written."""
    return cmd_run(manifest, config, out_dir, overwrite, write_estimates=False)


def cmd_sweep_doa(manifest, config, grid, threshold, out_dir, overwrite=False):
    grid = list(grid)
    if not grid:
        raise ConfigurationError("DOA error grid is empty")
    csv_path = os.path.join(out_dir, "sweep.csv")
    data_path = os.path.join(out_dir, "sweep.json")
    _guard([csv_path, data_path], overwrite)
    os.makedirs(out_dir, exist_ok=True)
    result = doa_error_sweep(manifest, config.pipeline, grid, threshold)
    result.to_csv(csv_path)
    save_json(data_path, result.to_data())
    return result


def cmd_report(report_csv):
    """Aggregates recomputed from a report CSV."""
    return EvalReport.from_csv(report_csv).aggregates()


def _format_aggregates(aggregates):
    lines = [f"{'system':<32} {'n':>5} {'fail':>5} {'SDR':>9} {'SI-SDR':>9} {'SI-SDRi':>9} {'median':>9}"]
    for system, a in aggregates.items():
        lines.append(f"{system:<32} {a['count']:>5} {a['failed']:>5} "
                     f"{a['sdr_db']['mean']:>9.2f} {a['si_sdr_db']['mean']:>9.2f} "
                     f"{a['si_sdri_db']['mean']:>9.2f} {a['si_sdri_db']['median']:>9.2f}")
    return "\n".join(lines)


def _load_config(args):
    config = ToolConfig.load(args.config) if args.config else ToolConfig()
    pipe = config.pipeline
    overrides = {}
    if getattr(args, "frontend", None):
        overrides["frontend_kind"] = args.frontend
    if getattr(args, "extractor", None):
        overrides["extractor"] = ExtractorSpec(args.extractor, dict(pipe.extractor.params)
                                               if args.extractor == pipe.extractor.kind else {})
    if getattr(args, "extractor_command", None):
        overrides["extractor"] = ExtractorSpec("external-command", {"command": args.extractor_command})
    if getattr(args, "backend", None) is not None:
        overrides["backend_enabled"] = args.backend
    if getattr(args, "ref_channel", None) is not None:
        overrides["ref_channel"] = args.ref_channel
    if overrides:
        pipe = replace(pipe, **overrides)
        config = replace(config, pipeline=pipe, systems=[])
    if getattr(args, "sample_rate", None):
        config = replace(config, sample_rate=args.sample_rate)
    if getattr(args, "wav_format", None):
        config = replace(config, wav_format=args.wav_format)
    return config


def _pipeline_flags(p):
    p.add_argument("--frontend", choices=["DSB", "SDB", "MPDR"], help="front-end beamformer")
    p.add_argument("--extractor", choices=["oracle-irm", "oracle-signal", "coherence-mask"],
                   help="target extractor")
    p.add_argument("--extractor-command", help="external extractor: called as CMD MIX AUX OUT")
    p.add_argument("--backend", action=argparse.BooleanOptionalAction, default=None,
                   help="enable the back-end MVDR")
    p.add_argument("--ref-channel", type=int, help="reference channel index (default 0)")


def build_parser():
    parser = argparse.ArgumentParser(prog="bgtse", description="Beamformer-guided target speaker extraction")
    parser.add_argument("--config", help="JSON tool configuration")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a simulated two-speaker corpus")
    p.add_argument("--n-scenes", type=int, required=True)
    p.add_argument("--seed", type=int, help="corpus seed (default from config)")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--wav-format", choices=["float32", "pcm16"])
    p.add_argument("--overwrite", action="store_true")

    for name, help_text in (("run", "process a corpus and write estimates and a report"),
                            ("eval", "process a corpus and write only the report")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--overwrite", action="store_true")
        _pipeline_flags(p)

    p = sub.add_parser("sweep-doa", help="SI-SDRi under steering DOA errors")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=float, nargs="*", default=[0, 2, 5, 10, 15, 20],
                   help="DOA errors in degrees")
    p.add_argument("--threshold", type=float, default=15.0, help="angular-spacing bin edge (degrees)")
    p.add_argument("--overwrite", action="store_true")
    _pipeline_flags(p)

    p = sub.add_parser("report", help="aggregate an existing report CSV")
    p.add_argument("report", help="report.csv written by run/eval")
    p.add_argument("--json", help="also write the aggregates to this file")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            aggregates = cmd_report(args.report)
            print(_format_aggregates(aggregates))
            if args.json:
                with open(args.json, "w", encoding="utf-8") as fh:
                    json.dump(aggregates, fh, indent=2, sort_keys=True)
            return EXIT_OK
        config = _load_config(args)
        if args.command == "simulate":
            seed = config.seed if args.seed is None else args.seed
            manifest = cmd_simulate(config, args.n_scenes, seed, args.out, args.overwrite)
            print(f"wrote {len(manifest)} scenes to {args.out}")
            return EXIT_OK
        manifest = Manifest.load(args.manifest)
        if args.command in ("run", "eval"):
            fn = cmd_run if args.command == "run" else cmd_eval
            report = fn(manifest, config, args.out, args.overwrite)
            print(_format_aggregates(report.aggregates()))
            return EXIT_PARTIAL if report.failures else EXIT_OK
        if args.command == "sweep-doa":
            result = cmd_sweep_doa(manifest, config, args.grid, args.threshold, args.out, args.overwrite)
            print(result.to_csv(), end="")
            return EXIT_PARTIAL if result.failures else EXIT_OK
    except (ConfigurationError, ValueError) as exc:
        print(f"bgtse: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"bgtse: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    parser.error(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
