"""Command-line entry point: ``analyze``, ``compare``, ``synth`` and ``diagnose``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from . import pipeline
from .ingest import IngestError
from .stats import Heatmap, heatmap_correlation
from .synth import SynthConfig, generate, parse_effects


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file of key: value settings; flags override it")
    p.add_argument("--events", help="event log (delimiter-separated)")
    p.add_argument("--attributes", help="attribute table (delimiter-separated)")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--profile", dest="profile_kind", choices=("genre", "latent"))
    p.add_argument("--svd-rank", type=int)
    p.add_argument("--quantile", type=float)
    p.add_argument("--treatment", action="append", dest="treatment_names", metavar="ATTR",
                   help="restrict to this treatment (repeatable)")
    p.add_argument("--tail", choices=("low", "high"), help="tail for a single --treatment")
    p.add_argument("--threshold", dest="significance_threshold", type=float)
    p.add_argument("--window", dest="window_seconds", type=int)
    p.add_argument("--utc-offset", type=float, help="hours east of UTC")
    p.add_argument("--seed", type=int)
    p.add_argument("--genres", help="comma-separated genre vocabulary")
    p.add_argument("--delimiter")
    p.add_argument("--export-covariates", action="store_true", default=None)
    p.add_argument("--dump-pairs", action="store_true", default=None)


def _run_config(args: argparse.Namespace) -> pipeline.RunConfig:
    overrides = {
        f.name: getattr(args, f.name, None)
        for f in dataclasses.fields(pipeline.RunConfig)
        if f.name not in ("treatments",)
    }
    if args.treatment_names:
        if args.tail and len(args.treatment_names) != 1:
            raise ValueError("--tail applies to exactly one --treatment")
        overrides["treatments"] = [
            f"{name}:{args.tail}" if args.tail else name for name in args.treatment_names
        ]
    elif args.tail:
        raise ValueError("--tail needs --treatment")
    cfg = pipeline.RunConfig.load(args.config, overrides)
    if not cfg.output_dir:
        raise ValueError("no output directory given (--out or output_dir in the config)")
    return cfg


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    result = pipeline.analyze(cfg)
    written = pipeline.write_outputs(result, cfg.output_dir)
    n_sig = sum(c.significant for c in result.heatmap.cells)
    print(f"{len(result.heatmap.cells)} cells, {n_sig} significant at |z| >= {cfg.significance_threshold}")
    print(f"wrote {', '.join(str(p) for p in written.values())}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    result = pipeline.diagnose(cfg)
    pipeline.write_outputs(result, cfg.output_dir)
    for name, b in result.balance.items():
        print(
            f"{name:<24} matched {b.mean_matched_distance:.4f}  random {b.mean_random_distance:.4f}"
            f"  improvement {b.improvement:.1%}"
        )
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    a = Heatmap.read(args.heatmap_a)
    b = Heatmap.read(args.heatmap_b)
    if a.treatments != b.treatments or a.genres != b.genres:
        raise ValueError("heatmaps cover different treatment/genre grids")
    r = heatmap_correlation(a, b)
    print(f"correlation {r!r}")
    print("treatment,genre,z_a,z_b,agree")
    agree = 0
    for ca, cb in zip(a.cells, b.cells):
        same = ca.significant == cb.significant and (not ca.significant or (ca.z > 0) == (cb.z > 0))
        agree += same
        print(f"{ca.treatment},{ca.genre},{ca.z!r},{cb.z!r},{'yes' if same else 'no'}")
    print(f"agreement {agree}/{len(a.cells)}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    for key in ("seed", "n_events", "n_users", "n_programs", "n_genres", "n_locations", "confounding_strength"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.effect:
        effects = parse_effects(data.get("planted_effects") or {})
        effects.update(parse_effects(args.effect))
        data["planted_effects"] = {f"{a}:{g}": v for (a, g), v in effects.items()}
    out_dir = args.output_dir or data.pop("output_dir", None)
    data.pop("output_dir", None)
    if not out_dir:
        raise ValueError("no output directory given (--out or output_dir in the config)")
    cfg = SynthConfig.from_mapping(data)
    dataset = generate(cfg)
    paths = dataset.write(out_dir)
    echo = dataclasses.asdict(cfg)
    echo["planted_effects"] = {f"{a}:{g}": v for (a, g), v in sorted(cfg.planted_effects.items())}
    pipeline.write_json(
        Path(out_dir) / "synth_manifest.json",
        {
            "versions": pipeline.versions(),
            "config": echo,
            "genres": list(cfg.genres),
            "files": {k: pipeline.file_digest(p) for k, p in sorted(paths.items())},
        },
    )
    print(f"wrote {cfg.n_events} events to {paths['events']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nnatt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="ATT heatmap over every treatment x genre cell")
    _run_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("diagnose", help="matched vs random covariate distance per treatment")
    _run_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("compare", help="correlate the z-values of two heatmap files")
    p.add_argument("heatmap_a")
    p.add_argument("heatmap_b")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted effects")
    p.add_argument("--config", help="YAML synth config")
    p.add_argument("--out", dest="output_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-events", type=int)
    p.add_argument("--n-users", type=int)
    p.add_argument("--n-programs", type=int)
    p.add_argument("--n-genres", type=int)
    p.add_argument("--n-locations", type=int)
    p.add_argument("--confounding", dest="confounding_strength", type=float)
    p.add_argument("--effect", action="append", metavar="ATTR:GENRE=TAU", help="planted effect (repeatable)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IngestError, ValueError, KeyError, OSError, yaml.YAMLError) as exc:
        print(f"nnatt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
