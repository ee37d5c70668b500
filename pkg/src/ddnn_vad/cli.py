"""Command-line interface: synth / extract / pretrain / finetune / eval / predict / sweep.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import (SPLITS, CorpusConfig, CorpusManifest, cell_name, corpus_features,
                      load_corpus_cell, synthesize_corpus, write_corpus)
from .evaluation import (EvalReport, accuracy, default_exclusions, depth_sweep, merge_reports,
                         render_csv, render_text)
from .exceptions import ConfigError, DataError, DDNNError
from .features import (extract_features, fit_norm_stats, normalize, read_feature_matrix,
                       read_labels, read_wav, write_feature_matrix, write_labels)
from .finetune import (FinetuneConfig, assemble_classifier, decide, finetune, predict_proba,
                       write_training_log)
from .network import load_model, save_model
from .pretrain import PretrainConfig, run_dbn_pretraining, run_pretraining

logger = logging.getLogger("ddnn_vad")

SECTIONS = {"corpus": CorpusConfig, "pretrain": PretrainConfig, "finetune": FinetuneConfig}


def load_config(path) -> dict:
    """Read a JSON config with optional ``corpus``, ``pretrain`` and ``finetune`` sections."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    out = {}
    for name, cls in SECTIONS.items():
        section = raw.get(name, {})
        fields = set(cls.__dataclass_fields__)
        extra = set(section) - fields
        if extra:
            raise ConfigError(f"unknown keys in '{name}': {sorted(extra)}")
        try:
            out[name] = cls(**section)
        except TypeError as exc:
            raise ConfigError(f"bad '{name}' section: {exc}") from exc
    return out


def _override(cfg, **kw):
    kw = {k: v for k, v in kw.items() if v is not None}
    try:
        return replace(cfg, **kw) if kw else cfg
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _split_files(directory: Path, split: str):
    return (directory / f"{split}.noisy.feat", directory / f"{split}.clean.feat",
            directory / f"{split}.labels")


def load_split(directory, split: str):
    noisy_p, clean_p, labels_p = _split_files(Path(directory), split)
    for p in (noisy_p, clean_p, labels_p):
        if not p.exists():
            raise DataError(f"missing {p}")
    noisy, clean, labels = (read_feature_matrix(noisy_p), read_feature_matrix(clean_p),
                            read_labels(labels_p))
    if not (noisy.shape == clean.shape and noisy.shape[0] == labels.shape[0]):
        raise DataError(f"{directory}: {split} split files are not row-aligned")
    return noisy, clean, labels


def cell_dirs(root) -> list:
    """Feature cell directories under ``root`` (or ``root`` itself if it is one)."""
    root = Path(root)
    if (root / "train.noisy.feat").exists() or (root / "test.noisy.feat").exists():
        return [root]
    index = root / "index.json"
    if not index.exists():
        raise DataError(f"{root} is neither a feature cell nor an extraction root")
    return [root / c["dir"] for c in json.loads(index.read_text())["cells"]]


def cell_meta(directory) -> dict:
    meta = Path(directory) / "cell.json"
    if meta.exists():
        return json.loads(meta.read_text())
    return {"noise": Path(directory).name, "snr_db": 0.0}


# --- commands ---------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = load_config(args.config)["corpus"]
    cfg = _override(cfg, seed=args.seed)
    manifest = write_corpus(cfg, args.out)
    print(f"wrote {len(manifest.entries)} utterances in {len(manifest.cells())} cells to {args.out}")


def cmd_extract(args) -> None:
    manifest = CorpusManifest.load(args.manifest)
    root = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for noise, snr in manifest.cells():
        name = cell_name(noise, snr)
        cell = load_corpus_cell(manifest, root, noise, snr)
        frames = corpus_features(cell)
        cdir = out / name
        cdir.mkdir(exist_ok=True)
        for split, data in frames.items():
            noisy_p, clean_p, labels_p = _split_files(cdir, split)
            write_feature_matrix(noisy_p, data.noisy)
            write_feature_matrix(clean_p, data.clean)
            write_labels(labels_p, data.labels)
        (cdir / "cell.json").write_text(json.dumps({"noise": noise, "snr_db": snr}) + "\n")
        cells.append({"dir": name, "noise": noise, "snr_db": snr})
        logger.info("extracted %s", name)
    (out / "index.json").write_text(json.dumps({"cells": cells}, indent=2) + "\n")
    print(f"extracted {len(cells)} cells to {out}")


def cmd_pretrain(args) -> None:
    cfg = load_config(args.config)["pretrain"]
    sizes = tuple(cfg.layer_sizes[:args.depth]) if args.depth else None
    cfg = _override(cfg, seed=args.seed, max_epochs=args.epochs, layer_sizes=sizes)
    noisy, clean, _ = load_split(args.features, "train")
    norm = fit_norm_stats(noisy)
    x = normalize(noisy, norm)
    if args.method == "dbn":
        state = run_dbn_pretraining(x, cfg)
    else:
        x_clean = normalize(clean, fit_norm_stats(clean))
        state = run_pretraining(x, x_clean, cfg, checkpoint_dir=args.checkpoints, norm_stats=norm)
    model = assemble_classifier(state, cfg.seed, cfg.depth, norm)
    save_model(model, args.out)
    print(f"pre-trained {'-'.join(map(str, model.layer_sizes))} model written to {args.out}")


def cmd_finetune(args) -> None:
    cfg = load_config(args.config)["finetune"]
    model = load_model(args.model)
    cfg = _override(cfg, seed=args.seed if args.seed is not None else model.seed,
                    max_epochs=args.epochs)
    if model.classifier is None:
        raise DataError(f"{args.model} is a layer checkpoint without a classifier head")
    if model.norm_stats is None:
        raise DataError(f"{args.model} has no normalization statistics")
    noisy, _, labels = load_split(args.features, "train")
    dev = None, None
    if _split_files(Path(args.features), "dev")[0].exists():
        dn, _, dl = load_split(args.features, "dev")
        dev = normalize(dn, model.norm_stats), dl
    trained, log = finetune(model, normalize(noisy, model.norm_stats), labels, cfg, *dev)
    save_model(trained, args.out)
    log_path = args.log or f"{args.out}.log.csv"
    write_training_log(log, log_path)
    print(f"fine-tuned model written to {args.out} (log: {log_path})")


def _report_paths(path):
    path = Path(path)
    return path, path.with_suffix(".txt") if path.suffix != ".txt" else path.with_suffix(".table.txt")


def _write_report(report: EvalReport, path) -> None:
    csv_path, txt_path = _report_paths(path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(render_csv(report))
    txt_path.write_text(render_text(report))


def cmd_eval(args) -> None:
    model = load_model(args.model)
    if model.classifier is None or model.norm_stats is None:
        raise DataError(f"{args.model} is not a complete classifier")
    report = EvalReport(seeds=[model.seed])
    noises = []
    for cdir in cell_dirs(args.features):
        meta = cell_meta(cdir)
        noisy, _, labels = load_split(cdir, args.split)
        decisions = decide(predict_proba(model, normalize(noisy, model.norm_stats)))
        report.add(args.label, meta["noise"], meta["snr_db"], model.depth,
                   accuracy(decisions, labels), len(labels))
        noises.append(meta["noise"])
    report.excluded = default_exclusions(noises)
    _write_report(report, args.report)
    print(render_text(report))


def cmd_predict(args) -> None:
    model = load_model(args.model)
    if model.classifier is None or model.norm_stats is None:
        raise DataError(f"{args.model} is not a complete classifier")
    signal = read_wav(args.wav)
    feats = normalize(extract_features(signal), model.norm_stats)
    decisions = decide(predict_proba(model, feats))
    write_labels(args.out, decisions)
    print(f"{len(decisions)} frames, {decisions.mean() * 100:.2f}% speech -> {args.out}")


def cmd_sweep(args) -> None:
    cfgs = load_config(args.config)
    corpus, pcfg, fcfg = cfgs["corpus"], cfgs["pretrain"], cfgs["finetune"]
    corpus = _override(corpus, seed=args.corpus_seed)
    params = dict(hidden_layer_sizes=pcfg.layer_sizes, pretrain_learning_rate=pcfg.learning_rate,
                  pretrain_epochs=pcfg.max_epochs, finetune_learning_rate=fcfg.learning_rate,
                  finetune_epochs=fcfg.max_epochs, batch_size=pcfg.batch_size,
                  clean_method=pcfg.clean_method)
    cells = {}
    for noise in corpus.noises:
        for snr in corpus.snrs:
            cells[(noise, snr)] = corpus_features(synthesize_corpus(corpus, noise, snr))
    seeds = range(args.seeds)
    reports = [depth_sweep(cells, args.depths, seeds, method, params) for method in args.methods]
    report = merge_reports(reports)
    _write_report(report, args.report)
    for key, msg in sorted(report.failures.items()):
        print(f"FAILED {key}: {msg}", file=sys.stderr)
    print(render_text(report))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddnn-vad", description="Denoising-DNN voice activity detection")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a paired noisy/clean corpus")
    s.add_argument("--config", help="JSON config (corpus section used)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", help="extract 273-dim features for every corpus cell")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("pretrain", help="denoising layer-wise pre-training")
    s.add_argument("--features", required=True, help="feature cell directory")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--depth", type=int, choices=(1, 2, 3))
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--method", choices=("ddnn", "dbn"), default="ddnn")
    s.add_argument("--checkpoints", help="directory for per-level checkpoints")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="supervised fine-tuning of a pre-trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("eval", help="frame accuracy on a split")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True, help="feature cell or extraction root")
    s.add_argument("--report", required=True, help="CSV path; a .txt table is written alongside")
    s.add_argument("--split", choices=SPLITS, default="test")
    s.add_argument("--label", default="DDNN", help="method name in the report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="frame decisions for a WAV file")
    s.add_argument("--model", required=True)
    s.add_argument("--wav", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("sweep", help="depth x seed sweep on an in-memory synthetic corpus")
    s.add_argument("--config")
    s.add_argument("--report", required=True)
    s.add_argument("--depths", type=int, nargs="+", default=[1, 2, 3])
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--methods", nargs="+", default=["DDNN"], choices=("DDNN", "DBN", "DNN"))
    s.add_argument("--corpus-seed", type=int)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        args.func(args)
    except DDNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
