"""Command-line interface.

Subcommands: ingest, sample, attribute, cluster, report, run,
`scenario watermark`, `validate untrained`. Every pipeline field in the
JSON config can be overridden with a `--dotted.key value` flag.
Exit codes: 0 success, 2 validation failure, 1 error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import InputError
from .pipeline import (
    PipelineConfig,
    run_pipeline,
    validate_untrained,
    warm_ingest,
)
from .scenario import CLASS_NAMES, generate_watermark_scenario


def _apply_overrides(data: dict, extras: list[str]) -> dict:
    if len(extras) % 2 != 0:
        raise InputError(f"dangling override flag in {extras!r}")
    for i in range(0, len(extras), 2):
        flag, raw = extras[i], extras[i + 1]
        if not flag.startswith("--"):
            raise InputError(f"expected --key value pairs, got {flag!r}")
        path = flag[2:].replace("-", "_").split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value
    return data


def _load_config(args, extras, require_seed=False) -> PipelineConfig:
    with open(args.config, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    data = _apply_overrides(data, extras)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if require_seed and "seed" not in data:
        raise InputError("--seed is mandatory for run")
    return PipelineConfig.from_dict(data)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _scenario_config(out: Path, manifest: Path, spec_a: dict, spec_b: dict, seed: int) -> Path:
    config = {
        "manifest": str(manifest),
        "model_a": spec_a,
        "model_b": spec_b,
        "embedder": {"kind": "builtin-embedder", "channels": 3},
        "target_class": CLASS_NAMES[1],
        "budget": 100,
        "attribution": {
            "top_classes": 2,
            "segments_per_image": 5,
            "ig_steps": 64,
            "grid_rows": 4,
            "grid_cols": 4,
            "blur_sigma": "auto",
        },
        "clustering": {"num_clusters": 6, "seed": seed},
        "ordering": "imbalance",
        "within_sort": "attribution_desc",
        "filter": {"mode": "none"},
        "out_dir": str(out / "out"),
        "seed": seed,
    }
    path = out / "config.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segcompare",
        description="Compare two image classifiers by their most influential segments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ingest", "validate the manifest and warm the prediction cache"),
        ("sample", "draw the balanced per-model samples"),
        ("attribute", "compute segment attributions for both models"),
        ("cluster", "embed and cluster the pooled segments"),
        ("report", "render the three comparison reports"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)

    p_run = sub.add_parser("run", help="execute the full pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, required=True)

    p_scenario = sub.add_parser("scenario", help="generate built-in validation scenarios")
    scen_sub = p_scenario.add_subparsers(dest="scenario_kind", required=True)
    p_wm = scen_sub.add_parser("watermark", help="two-class blob dataset with a stamped shortcut")
    p_wm.add_argument("--out", required=True)
    p_wm.add_argument("--seed", type=int, required=True)
    p_wm.add_argument("--n-images", type=int, default=100)
    p_wm.add_argument("--rate", type=float, default=0.5)
    p_wm.add_argument("--label-noise", type=float, default=0.1)

    p_validate = sub.add_parser("validate", help="built-in validation checks")
    val_sub = p_validate.add_subparsers(dest="validate_kind", required=True)
    p_untrained = val_sub.add_parser(
        "untrained", help="compare model A against an untrained opponent"
    )
    p_untrained.add_argument("--config", required=True)
    p_untrained.add_argument("--seed", type=int)
    p_untrained.add_argument(
        "--opponent", default="builtin-random",
        choices=("builtin-random", "builtin-constant"),
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad args; 2 is reserved
        return 0 if exc.code == 0 else 1
    try:
        if args.command == "scenario":
            out = Path(args.out)
            manifest, spec_a, spec_b = generate_watermark_scenario(
                args.seed, args.n_images, args.rate, out, args.label_noise
            )
            config_path = _scenario_config(out, manifest, spec_a, spec_b, args.seed)
            _emit({
                "manifest": str(manifest),
                "scenario": str(out / "scenario.json"),
                "config": str(config_path),
            })
            return 0
        if args.command == "validate":
            cfg = _load_config(args, extras)
            verdict = validate_untrained(cfg, args.opponent)
            _emit(verdict)
            return 0 if verdict["pass"] else 2
        if args.command == "ingest":
            _emit(warm_ingest(_load_config(args, extras)))
            return 0
        if args.command == "run":
            _emit(run_pipeline(_load_config(args, extras, require_seed=True)))
            return 0
        # staged subcommands share run_pipeline's resume machinery
        _emit(run_pipeline(_load_config(args, extras), until=args.command))
        return 0
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
