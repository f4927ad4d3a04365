"""Command line pipeline driver.

Stages write their artifacts under the config's out_dir:

    data/                       gen-data
    models/*.ckpt               train-codec, train-predictors, train-gan
    results/<method>.npz        enhance (ranked samples + kept images)
    results/png/<method>/       enhance (top-1 stylization per test image)
    results/evaluated.json      evaluate
    report/                     report (CSV/JSON/SVG)
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attribute import Predictor
from .config import ExperimentConfig
from .nets import save_checkpoint, load_checkpoint
from .checkpoint import save_entries, load_entries
from .pipeline import (ImageReport, Models, RankedEntry, RunReport,
                       enhance_image, evaluate_runs, train_codec_stage,
                       train_gan_stage, train_predictor_stage)
from .pipeline import MethodRun
from .report import emit_report
from .stylegan import StyleCorpus
from .synthdata import generate_corpora, load_corpora, write_corpora

METHODS = ("baseline", "bae", "abae")


def _load_cfg(args):
    return ExperimentConfig.from_file(args.config)


def _models_dir(cfg):
    d = Path(cfg.out_dir) / "models"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_models(cfg, need=("encoder", "decoder", "generator", "internal", "external")):
    d = Path(cfg.out_dir) / "models"
    models = Models(encoder=None, decoder=None)
    if "encoder" in need:
        models.encoder = load_checkpoint(d / "encoder.ckpt")
        models.decoder = load_checkpoint(d / "decoder.ckpt")
    if "generator" in need:
        models.generator = load_checkpoint(d / "generator.ckpt")
        models.corpus = StyleCorpus.from_entries(load_entries(d / "corpus.ckpt"))
    if "internal" in need:
        models.internal = Predictor.load(d / "predictor_internal.ckpt")
    if "external" in need:
        models.external = Predictor.load(d / "predictor_external.ckpt")
    return models


def cmd_gen_data(args):
    cfg = _load_cfg(args)
    corp = generate_corpora(cfg.master_seed, styles_k=cfg.styles_k,
                            n_internal=cfg.n_internal, n_external=cfg.n_external,
                            n_test=cfg.n_test, image_size=cfg.image_size)
    manifest = write_corpora(corp, Path(cfg.out_dir) / "data", overwrite=args.overwrite)
    print(f"wrote data for master seed {cfg.master_seed}: {manifest['counts']}")


def cmd_train_codec(args):
    cfg = _load_cfg(args)
    corp = load_corpora(Path(cfg.out_dir) / "data")
    encoder, decoder, hist = train_codec_stage(cfg, corp)
    d = _models_dir(cfg)
    save_checkpoint(encoder, d / "encoder.ckpt")
    save_checkpoint(decoder, d / "decoder.ckpt")
    print(f"codec trained: autoencoder loss {hist['autoencoder'][-1]:.5f}, "
          f"transfer loss {hist['transfer'][-1]:.5f}")


def cmd_train_predictors(args):
    cfg = _load_cfg(args)
    corp = load_corpora(Path(cfg.out_dir) / "data")
    internal, external, stats = train_predictor_stage(cfg, corp)
    d = _models_dir(cfg)
    internal.save(d / "predictor_internal.ckpt")
    external.save(d / "predictor_external.ckpt")
    for split in ("internal", "external"):
        rho = stats[split]["heldout_spearman"]
        rho_txt = "undefined (constant labels)" if rho is None else f"{rho:.3f}"
        print(f"{split} predictor held-out rank correlation: {rho_txt}")


def cmd_train_gan(args):
    cfg = _load_cfg(args)
    corp = load_corpora(Path(cfg.out_dir) / "data")
    encoder = load_checkpoint(Path(cfg.out_dir) / "models" / "encoder.ckpt")
    generator, critic, corpus, hist = train_gan_stage(cfg, corp, encoder)
    d = _models_dir(cfg)
    save_checkpoint(generator, d / "generator.ckpt")
    save_checkpoint(critic, d / "critic.ckpt")
    save_entries(d / "corpus.ckpt", corpus.to_entries())
    print(f"style GAN trained: final Wasserstein estimate "
          f"{hist['wasserstein'][-1] if hist['wasserstein'] else float('nan'):.4f}")


def _apply_enhance_overrides(cfg, args):
    if args.sampler:
        cfg.sampler = args.sampler
    if args.tau is not None:
        cfg.tau = args.tau
    if args.lambda_ is not None:
        cfg.lam = args.lambda_
    if args.alpha is not None:
        cfg.alpha0 = args.alpha
    if args.samples is not None:
        cfg.samples = args.samples
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _save_runs_npz(path, corp, runs):
    arrays = {}
    for i, image_id in enumerate(corp["test_ids"]):
        run = runs[i]
        arrays[f"{image_id}|images"] = run.images
        arrays[f"{image_id}|internal"] = np.array([e.internal for e in run.entries])
        arrays[f"{image_id}|alpha"] = np.array([e.alpha for e in run.entries])
        arrays[f"{image_id}|index"] = np.array([e.sample_index for e in run.entries], dtype=np.int64)
    np.savez(path, **arrays)


def _load_runs_npz(path, corp, method):
    data = np.load(path)
    runs = []
    for image_id in corp["test_ids"]:
        entries = [RankedEntry(rank=r + 1,
                               sample_index=int(data[f"{image_id}|index"][r]),
                               alpha=float(data[f"{image_id}|alpha"][r]),
                               internal=float(data[f"{image_id}|internal"][r]))
                   for r in range(len(data[f"{image_id}|internal"]))]
        runs.append(MethodRun(method=method, entries=entries,
                              images=data[f"{image_id}|images"]))
    return runs


def _write_top_pngs(cfg, method, corp, runs):
    from PIL import Image
    d = Path(cfg.out_dir) / "results" / "png" / method
    d.mkdir(parents=True, exist_ok=True)
    for image_id, run in zip(corp["test_ids"], runs):
        if len(run.images) == 0:
            continue
        arr = (np.clip(run.images[0], 0, 1) * 255.0).round().astype(np.uint8)
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(d / f"{image_id}.png")


def cmd_enhance(args):
    cfg = _apply_enhance_overrides(_load_cfg(args), args)
    corp = load_corpora(Path(cfg.out_dir) / "data")
    models = _load_models(cfg, need=("encoder", "generator", "internal"))
    results_dir = Path(cfg.out_dir) / "results"
    results_dir.mkdir(parents=True, exist_ok=True)
    if args.grid_lambda or args.grid_tau:
        _run_grid(cfg, corp, models, args)
        return
    runs = [enhance_image(args.method, corp["test"][i], models, cfg, i)
            for i in range(len(corp["test"]))]
    _save_runs_npz(results_dir / f"{args.method}.npz", corp, runs)
    _write_top_pngs(cfg, args.method, corp, runs)
    top1 = np.mean([r.entries[0].internal for r in runs if r.entries])
    print(f"{args.method}: enhanced {len(runs)} images, "
          f"mean top-1 internal score {top1:.4f}")


def _run_grid(cfg, corp, models, args):
    """Per grid point: enhance + evaluate in memory, report one aggregate row."""
    models.external = Predictor.load(Path(cfg.out_dir) / "models" / "predictor_external.ckpt")
    lams = [float(v) for v in args.grid_lambda.split(",")] if args.grid_lambda else [cfg.lam_resolved]
    taus = [float(v) for v in args.grid_tau.split(",")] if args.grid_tau else [cfg.tau_resolved]
    rows = []
    for lam in lams:
        for tau in taus:
            cfg.lam, cfg.tau = lam, tau
            runs = {args.method: [enhance_image(args.method, corp["test"][i], models, cfg, i)
                                  for i in range(len(corp["test"]))]}
            report = evaluate_runs(cfg, models, corp, runs)
            for n in cfg.top_n:
                rows.append((lam, tau, args.method, n, report.aggregates[args.method][n]))
    out = Path(cfg.out_dir) / "results" / "grid.csv"
    with open(out, "w") as fh:
        fh.write("lambda,tau,method,top_n,mean_delta\n")
        for lam, tau, m, n, v in rows:
            fh.write(f"{lam:.12g},{tau:.12g},{m},{n},{v:.12g}\n")
    print(f"grid written to {out} ({len(rows)} rows)")


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    corp = load_corpora(Path(cfg.out_dir) / "data")
    models = _load_models(cfg, need=("external",))
    results_dir = Path(cfg.out_dir) / "results"
    runs = {}
    for method in METHODS + ("random",):
        path = results_dir / f"{method}.npz"
        if path.exists():
            runs[method] = _load_runs_npz(path, corp, method)
    if not runs:
        print("nothing to evaluate: run `enhance` first", file=sys.stderr)
        sys.exit(1)
    report = evaluate_runs(cfg, models, corp, runs)
    payload = {
        "attribute": report.attribute,
        "master_seed": report.master_seed,
        "top_n": report.top_n,
        "aggregates": report.aggregates,
        "per_image": [
            {
                "image_id": img.image_id,
                "original_external": img.original_external,
                "methods": {
                    m: [
                        {"rank": e.rank, "sample_index": e.sample_index,
                         "alpha": e.alpha, "internal": e.internal,
                         "external": e.external, "delta": e.delta}
                        for e in entries
                    ]
                    for m, entries in img.methods.items()
                },
            }
            for img in report.per_image
        ],
    }
    (results_dir / "evaluated.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    for m in sorted(report.aggregates):
        tops = ", ".join(f"top-{n}: {report.aggregates[m][n]:.4f}" for n in report.top_n)
        print(f"{m}: {tops}")


def cmd_report(args):
    cfg = _load_cfg(args)
    payload = json.loads((Path(cfg.out_dir) / "results" / "evaluated.json").read_text())
    report = RunReport(attribute=payload["attribute"],
                       master_seed=payload["master_seed"],
                       top_n=payload["top_n"])
    report.aggregates = {m: {int(n): v for n, v in d.items()}
                         for m, d in payload["aggregates"].items()}
    for img in payload["per_image"]:
        methods = {
            m: [RankedEntry(rank=e["rank"], sample_index=e["sample_index"],
                            alpha=e["alpha"], internal=e["internal"],
                            external=e["external"], delta=e["delta"])
                for e in entries]
            for m, entries in img["methods"].items()
        }
        report.per_image.append(ImageReport(image_id=img["image_id"],
                                            original_external=img["original_external"],
                                            methods=methods))
    written = emit_report(report, Path(cfg.out_dir) / "report")
    print("wrote " + ", ".join(str(p) for p in written))


def build_parser():
    p = argparse.ArgumentParser(prog="bae", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="experiment config file (YAML)")

    sp = sub.add_parser("gen-data", help="generate the synthetic corpora")
    common(sp)
    sp.add_argument("--overwrite", action="store_true")
    sp.set_defaults(fn=cmd_gen_data)

    sp = sub.add_parser("train-codec", help="train encoder/decoder")
    common(sp)
    sp.set_defaults(fn=cmd_train_codec)

    sp = sub.add_parser("train-predictors", help="train internal/external predictors")
    common(sp)
    sp.set_defaults(fn=cmd_train_predictors)

    sp = sub.add_parser("train-gan", help="train the style-space GAN")
    common(sp)
    sp.set_defaults(fn=cmd_train_gan)

    sp = sub.add_parser("enhance", help="run one enhancement method over the test set")
    common(sp)
    sp.add_argument("--method", required=True, choices=METHODS)
    sp.add_argument("--sampler", choices=("mh", "langevin", "hmc"))
    sp.add_argument("--tau", type=float)
    sp.add_argument("--lambda", dest="lambda_", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--samples", type=int, metavar="M")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--grid-lambda", help="comma-separated lambda grid")
    sp.add_argument("--grid-tau", help="comma-separated tau grid")
    sp.set_defaults(fn=cmd_enhance)

    sp = sub.add_parser("evaluate", help="score results with the external predictor")
    common(sp)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("report", help="emit CSV/JSON/SVG report files")
    common(sp)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.fn(args)


if __name__ == "__main__":
    main()
