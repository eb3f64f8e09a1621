"""Command-line entry point: ``salience-align <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error (unreadable or invalid
input), 4 internal error.  Machine-readable results go to stdout,
diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

log = logging.getLogger("salience_align")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_saliency(args) -> int:
    from .heatmap import load_image, save_grayscale
    from .spectral import SpectralParams, spectral_residual

    params = SpectralParams(args.size, args.kernel, args.sigma)
    save_grayscale(spectral_residual(load_image(args.input), params), args.out)
    return EXIT_OK


def cmd_lrp(args) -> int:
    from .heatmap import load_image, save_grayscale
    from .lrp import Rule
    from .nn import load_model
    from .pipeline.run import model_heatmap

    model = load_model(args.model)
    rule = Rule(args.rule, args.epsilon if args.rule == "epsilon" else 0.0)
    save_grayscale(model_heatmap(model, load_image(args.input), args.mask, rule), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    from .heatmap import load_grayscale, resize_bilinear
    from .metrics import cosine_similarity, downsample, spearman

    a, b = load_grayscale(args.a), load_grayscale(args.b)
    if a.shape != b.shape:
        if not args.resize:
            raise UsageError(f"maps differ in size ({a.width}x{a.height} vs {b.width}x{b.height}); "
                             "pass --resize to resample --a onto --b")
        a = resize_bilinear(a, b.width, b.height)
    a, b = downsample(a, args.downsample), downsample(b, args.downsample)
    cos, rho = cosine_similarity(a, b), spearman(a, b)
    print(f"cosine\t{cos:.12g}")
    print(f"spearman\t{rho:.12g}")
    return EXIT_OK


def _map_dir(path: Path) -> dict:
    from .heatmap import load_grayscale

    if not path.is_dir():
        raise FileNotFoundError(f"not a directory: {path}")
    return {p.stem: load_grayscale(p) for p in sorted(path.glob("*.pgm"))}


def cmd_emphasis(args) -> int:
    from collections import Counter

    from .emphasis import class_emphasis_diff, read_detections

    maps_a, maps_b = _map_dir(args.a), _map_dir(args.b)
    common = sorted(set(maps_a) & set(maps_b))
    detections = {k: v for k, v in read_detections(args.det).items() if k in common}
    skipped = Counter()
    rows = class_emphasis_diff({k: maps_a[k] for k in common}, {k: maps_b[k] for k in common},
                               detections, args.min_confidence, skipped)
    print("class_name\tmean_diff\tn_observations")
    for r in rows:
        print(f"{r.class_name}\t{r.mean_diff:.12g}\t{r.n_observations}")
    if skipped:
        print(f"skipped detections: {dict(sorted(skipped.items()))}", file=sys.stderr)
    return EXIT_OK


def cmd_subtract(args) -> int:
    from .emphasis import emergent_feature_map
    from .heatmap import load_grayscale, save_grayscale

    save_grayscale(emergent_feature_map(load_grayscale(args.driving), load_grayscale(args.imagenet),
                                        args.clip), args.out)
    return EXIT_OK


def cmd_stats(args) -> int:
    from .pipeline.report import read_scores, render_text, render_tsv, summarize

    report = summarize(read_scores(args.scores))
    print(render_text(report) if args.format == "text" else render_tsv(report), end="")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    from .pipeline.fixtures import FixtureSpec, generate_fixtures

    spec = FixtureSpec.load(args.spec) if args.spec else FixtureSpec()
    summary = generate_fixtures(spec, args.seed, args.out)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_run(args) -> int:
    from .pipeline.run import load_config, run_pipeline

    config = load_config(args.config)
    if args.output_dir is not None:
        config.output_dir = args.output_dir
    result = run_pipeline(config, workers=args.workers)
    print(f"scored {result.n_filtered - len({s[0] for s in result.skipped})} of {result.n_filtered} frames; "
          f"reports in {result.output_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline.report import from_json, render_text, render_tsv, to_json

    report = from_json(Path(args.input).read_text(encoding="utf-8"))
    render = {"text": render_text, "tsv": render_tsv, "json": to_json}[args.format]
    print(render(report), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="salience-align",
        description="Compare saliency heatmaps (LRP, spectral residual) against human gaze maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True

    p = sub.add_parser("saliency", help="spectral residual saliency map of an image")
    p.add_argument("--in", dest="input", type=Path, required=True, help="input image (PGM or PPM)")
    p.add_argument("--out", type=Path, required=True, help="output heatmap (PGM)")
    p.add_argument("--size", type=int, default=64, help="internal working resolution (default 64)")
    p.add_argument("--kernel", type=int, default=3, help="log-amplitude averaging filter size (default 3)")
    p.add_argument("--sigma", type=float, default=2.5, help="Gaussian blur sigma (default 2.5)")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("lrp", help="LRP relevance heatmap of an image under a model")
    p.add_argument("--model", type=Path, required=True, help="model manifest (JSON)")
    p.add_argument("--in", dest="input", type=Path, required=True, help="input image (PGM or PPM)")
    p.add_argument("--out", type=Path, required=True, help="output heatmap (PGM)")
    p.add_argument("--mask", type=_floats, default=None,
                   help="comma-separated output mask, one value per output unit (default all ones)")
    p.add_argument("--rule", choices=("epsilon", "z"), default="epsilon", help="propagation rule (default epsilon)")
    p.add_argument("--epsilon", type=float, default=1e-7, help="stabilizer for the epsilon rule (default 1e-7)")
    p.set_defaults(func=cmd_lrp)

    p = sub.add_parser("compare", help="cosine similarity and Spearman correlation of two maps",
                       description="Prints 'cosine<TAB>value' then 'spearman<TAB>value'.")
    p.add_argument("--a", type=Path, required=True, help="first heatmap (PGM)")
    p.add_argument("--b", type=Path, required=True, help="second heatmap (PGM), the reference")
    p.add_argument("--resize", action="store_true", help="bilinearly resample --a to the size of --b")
    p.add_argument("--downsample", type=int, default=1, help="block-average factor before scoring (default 1)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emphasis", help="per-class emphasis difference between two map sets",
                       description="Prints class_name, mean_diff, n_observations as TSV, largest first.")
    p.add_argument("--a", type=Path, required=True, help="directory of <frame_id>.pgm maps (minuend)")
    p.add_argument("--b", type=Path, required=True, help="directory of <frame_id>.pgm maps (subtrahend)")
    p.add_argument("--det", type=Path, required=True, help="detections CSV")
    p.add_argument("--min-confidence", type=float, default=0.3, help="detection confidence cut (default 0.3)")
    p.set_defaults(func=cmd_emphasis)

    p = sub.add_parser("subtract", help="emergent-feature map: driving minus generic")
    p.add_argument("--driving", type=Path, required=True, help="task-trained heatmap (PGM)")
    p.add_argument("--imagenet", type=Path, required=True, help="generic heatmap (PGM)")
    p.add_argument("--out", type=Path, required=True, help="output map (PGM)")
    p.add_argument("--clip", type=float, default=100.0, help="upper clip after normalizing to 255 (default 100)")
    p.set_defaults(func=cmd_subtract)

    p = sub.add_parser("stats", help="medians, ratios and tests from a per-frame score log",
                       description="TSV records: 'median' metric method n all attentive inattentive ratio "
                                   "U p path; 'anova' metric F p df_between df_within.")
    p.add_argument("--scores", type=Path, required=True, help="score log CSV")
    p.add_argument("--format", choices=("tsv", "text"), default="tsv", help="output format (default tsv)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("fixtures", help="generate a seeded synthetic dataset")
    p.add_argument("--spec", type=Path, default=None, help="fixture parameters (JSON); defaults if omitted")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("run", help="end-to-end pipeline from a config file")
    p.add_argument("--config", type=Path, required=True, help="pipeline config (JSON)")
    p.add_argument("--workers", type=int, default=None,
                   help="worker threads (default from config; capped by SALIENCE_ALIGN_THREADS)")
    p.add_argument("--output-dir", type=Path, default=None, help="override the config's output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-render a saved report.json")
    p.add_argument("--in", dest="input", type=Path, required=True, help="report JSON")
    p.add_argument("--format", choices=("text", "tsv", "json"), default="text", help="output format (default text)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    from .pipeline.run import PipelineError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, PipelineError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        print(f"{parser.prog} {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
