"""Command-line interface: one thin subcommand per pipeline stage.

Every command accepts ``--config FILE`` (flat ``section.key = value``
lines) and repeatable ``--set section.key=value`` overrides; unknown
keys fail fast. Commands exit 0 on success and 1 with a single-line
diagnostic on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys

from fuseid import config as cfgmod
from fuseid import evaluate as evalmod
from fuseid import fusion, image, kmedoids, matcher, synth


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat section.key = value config file")
    p.add_argument(
        "--set",
        dest="sets",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def _load(args: argparse.Namespace, extra: tuple[str, ...] = ()) -> cfgmod.Config:
    return cfgmod.load_config(args.config, tuple(args.sets) + extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuseid",
        description="Multimodal fingerprint+ear identification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract a SIFT template from one image")
    p.add_argument("image", help="input image (PGM native, PNG via Pillow)")
    p.add_argument("--modality", required=True, choices=(fusion.FINGERPRINT, fusion.EAR))
    p.add_argument("--out", required=True, help="output template file")
    p.add_argument("--source-id", default="", help="subject/sample identifier")
    p.add_argument("--landmarks", help="ear landmark sidecar file (crops before extraction)")
    _add_config_args(p)

    p = sub.add_parser("fuse", help="concatenate fingerprint and ear templates")
    p.add_argument("fingerprint", help="fingerprint template file")
    p.add_argument("ear", help="ear template file")
    p.add_argument("--out", required=True)
    _add_config_args(p)

    p = sub.add_parser("reduce", help="K-medoids reduce a template")
    p.add_argument("template", help="input template file")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, help="medoid count (default: reduce.k or n/4 capped at 200)")
    p.add_argument("--seed", type=int, help="PAM seed (default: reduce.seed)")
    _add_config_args(p)

    p = sub.add_parser("match", help="score a probe template against gallery templates")
    p.add_argument("probe", help="probe template file")
    p.add_argument("gallery", nargs="+", help="gallery template file(s)")
    p.add_argument("--csv", help="also write the normalized scores as CSV")
    _add_config_args(p)

    p = sub.add_parser("synth", help="generate a synthetic multimodal dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", type=int, help="shortcut for synth.subjects")
    p.add_argument("--samples", type=int, help="shortcut for synth.samples")
    p.add_argument("--seed", type=int, help="shortcut for synth.seed")
    _add_config_args(p)

    p = sub.add_parser("evaluate", help="run the identification experiment on a manifest")
    p.add_argument("manifest", help="dataset manifest file")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--workers", type=int, help="shortcut for eval.workers")
    _add_config_args(p)

    return parser


def _cmd_extract(args: argparse.Namespace) -> int:
    cfg = cfgmod.pipeline_config(_load(args))
    img = image.load_image(args.image)
    if args.modality == fusion.FINGERPRINT:
        pre = evalmod.preprocess_fingerprint(img, cfg)
    else:
        landmarks = image.load_landmarks(args.landmarks) if args.landmarks else None
        pre = evalmod.preprocess_ear(img, cfg, landmarks)
    from fuseid.sift import extract_features

    fs = extract_features(pre, args.modality, cfg.sift, source_id=args.source_id)
    fusion.write_template(fusion.feature_set_template(fs), args.out)
    print(f"{len(fs)} keypoints -> {args.out}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    _load(args)  # validates any supplied keys even though none are consumed
    fp = fusion.as_feature_set(fusion.read_template(args.fingerprint), fusion.FINGERPRINT)
    ear = fusion.as_feature_set(fusion.read_template(args.ear), fusion.EAR)
    template = fusion.fuse(fp, ear)
    fusion.write_template(template, args.out)
    print(f"{len(template)} entries -> {args.out}")
    return 0


def _cmd_reduce(args: argparse.Namespace) -> int:
    extra = []
    if args.k is not None:
        extra.append(f"reduce.k={args.k}")
    if args.seed is not None:
        extra.append(f"reduce.seed={args.seed}")
    cfg = _load(args, tuple(extra))
    template = fusion.read_template(args.template)
    n = len(template.entries)
    if n == 0:
        raise ValueError("cannot reduce an empty template")
    k = cfg["reduce.k"] or kmedoids.default_k(n)
    pam_cfg = kmedoids.PamConfig(
        k=min(k, n),
        seed=cfg["reduce.seed"],
        max_iterations=cfg["reduce.max_iterations"],
        metric=cfg["reduce.metric"],
    )
    reduced = kmedoids.reduce_template(template, pam_cfg)
    fusion.write_template(reduced, args.out)
    print(f"{n} -> {len(reduced)} entries -> {args.out}")
    return 0


def _cmd_match(args: argparse.Namespace) -> int:
    cfg = cfgmod.pipeline_config(_load(args))
    probe = fusion.read_template(args.probe)
    raw = []
    ids = []
    for path in args.gallery:
        gal = fusion.read_template(path)
        score = matcher.match_score(probe, gal, cfg.match)
        raw.append(score.matched_count)
        ids.append(gal.subject_id or path)
    norm = matcher.minmax_normalize(raw)
    print("gallery_id,raw,normalized")
    for gid, r, s in zip(ids, raw, norm):
        print("%s,%d,%.6f" % (gid, r, s))
    if args.csv:
        from fuseid.report import write_scores_csv

        write_scores_csv(args.csv, ids, [(probe.subject_id or args.probe, norm)])
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    extra = []
    if args.subjects is not None:
        extra.append(f"synth.subjects={args.subjects}")
    if args.samples is not None:
        extra.append(f"synth.samples={args.samples}")
    if args.seed is not None:
        extra.append(f"synth.seed={args.seed}")
    scfg = cfgmod.synth_config(_load(args, tuple(extra)))
    result = synth.synth_dataset(scfg, args.out)
    print(result.manifest_path)
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    extra = []
    if args.workers is not None:
        extra.append(f"eval.workers={args.workers}")
    cfg = cfgmod.pipeline_config(_load(args, tuple(extra)))
    manifest = evalmod.load_manifest(args.manifest)
    rep = evalmod.run_experiment(manifest, cfg, args.out)
    for name, rate in rep.rank1.items():
        print("rank1_%s=%.6f" % (name, rate))
    print(f"report -> {rep.out_dir}")
    return 0


_HANDLERS = {
    "extract": _cmd_extract,
    "fuse": _cmd_fuse,
    "reduce": _cmd_reduce,
    "match": _cmd_match,
    "synth": _cmd_synth,
    "evaluate": _cmd_evaluate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
