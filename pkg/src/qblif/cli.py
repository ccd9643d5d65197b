"""Command-line entry point.

Exit codes::

    0  success
    1  any other library error
    2  usage error (unknown subcommand or flag)
    3  configuration error (unreadable file, unknown key, bad value)
    4  malformed checkpoint or model file
    5  checksum mismatch
    6  unsupported file version
    7  numeric fault (NaN or inf in a membrane potential)
    8  missing input file

Log verbosity follows ``QBLIF_LOG_LEVEL`` (DEBUG, INFO, WARNING, ERROR).
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .absorb import absorb_scales, export_model, import_model, infer_integer
from .checkpoint import checkpoint_load, checkpoint_save
from .data import Dataset, encode, generate_synthetic, load_idx_images
from .energy import report_from_trace
from .estimator import QBLIFClassifier
from .exceptions import (ChecksumError, ConfigError, FormatError, NumericFaultError, QBLIFError,
                         UnsupportedVersionError)
from .metrics import layer_stats

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_CHECKSUM = 5
EXIT_VERSION = 6
EXIT_NUMERIC = 7
EXIT_MISSING = 8

LOG_ENV = "QBLIF_LOG_LEVEL"
TEST_SEED_OFFSET = 10_000

log = logging.getLogger("qblif")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def load_datasets(cfg: config_mod.ExperimentConfig, seed: int | None = None):
    """Train and test splits; synthetic test sets use a disjoint seed."""
    d = cfg.data
    seed = cfg.experiment.seed if seed is None else seed
    if d.task == "temporal-xor":
        opts = dict(n_patterns=d.n_patterns, dim=d.dim, frames=d.frames, noise=d.noise)
    elif d.task == "gaussians":
        opts = dict(n_classes=d.n_classes, dim=d.dim, separation=d.separation, sigma=d.sigma)
    else:
        train = load_idx_images(d.train_images, d.train_labels or None)
        test = load_idx_images(d.test_images, d.test_labels or None)
        n_classes = max(train.n_classes, test.n_classes)

        def with_channel(ds, split):
            return Dataset(ds.features[:, None], ds.labels, n_classes, split)
        return with_channel(train, "train"), with_channel(test, "test")
    train = generate_synthetic(d.task, d.n_train, seed=seed, **opts)
    test = generate_synthetic(d.task, d.n_test, seed=seed + TEST_SEED_OFFSET, **opts)
    test.split = "test"
    return train, test


def make_classifier(cfg, neuron=None, surrogate=None, seed=None, timesteps=None) -> QBLIFClassifier:
    n, o = cfg.neuron, cfg.optimizer
    return QBLIFClassifier(
        layers=cfg.network.layers, neuron=neuron or n.kind,
        surrogate=surrogate or cfg.surrogate.kind, n_max=n.n_max,
        timesteps=timesteps or cfg.network.timesteps, encoding=cfg.resolved_encoding(),
        beta=n.beta, alpha=n.alpha, v_theta=n.v_theta, gamma_init=n.gamma_init,
        train_beta_alpha=n.train_beta_alpha, arctan_sharpness=cfg.surrogate.arctan_sharpness,
        lr=o.lr, momentum=o.momentum, epochs=o.epochs, batch_size=o.batch_size, cosine=o.cosine,
        random_state=cfg.experiment.seed if seed is None else seed,
        deterministic=cfg.experiment.deterministic)


def _load_classifier(path) -> QBLIFClassifier:
    network, extra = checkpoint_load(path, with_extra=True)
    return QBLIFClassifier.from_network(network, classes=extra.get("classes"))


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} does not exist")
    return path


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_tsv(path: Path, header, rows, config_hash):
    with path.open("w") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(str(v) for v in row) + "\n")


def _print_table(header, rows):
    cells = [list(map(str, header))] + [[str(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    for k, r in enumerate(cells):
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
        if k == 0:
            print("  ".join("-" * w for w in widths))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(cfg, args) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    train, test = load_datasets(cfg)
    (out / "config.ini").write_text(config_mod.dump_config(cfg))
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")

    def append(record):
        record = dict(record, config_hash=chash)
        with metrics_path.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
        log.info("epoch %d loss %.6f acc %.4f", record["epoch"], record["loss"], record["accuracy"])

    clf = make_classifier(cfg).fit(train.features, train.labels, log=append)
    test_acc = float(clf.score(test.features, test.labels))
    with metrics_path.open("a") as fh:
        fh.write(json.dumps({"event": "final", "test_accuracy": test_acc,
                             "gammas": clf.network_.gammas(), "config_hash": chash},
                            sort_keys=True) + "\n")
    checkpoint_save(clf.network_, out / "model.qbck",
                    extra={"config_hash": chash, "classes": clf.classes_.tolist(),
                           "test_accuracy": test_acc})
    print(f"test_accuracy={test_acc!r}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    out = cfg.out_dir
    clf = _load_classifier(_require(Path(args.checkpoint or out / "model.qbck")))
    _, test = load_datasets(cfg)
    logits = clf.decision_function(test.features)
    acc = float(np.mean(clf.classes_[logits.argmax(axis=1)] == test.labels))
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "eval_logits.npy", logits)
    _write_json(out / "eval.json", {"accuracy": acc, "config_hash": cfg.config_hash()})
    print(f"accuracy={acc!r}")
    return EXIT_OK


def cmd_absorb(cfg, args) -> int:
    out = cfg.out_dir
    network = checkpoint_load(_require(Path(args.checkpoint or out / "model.qbck")))
    model = absorb_scales(network)
    dest = Path(args.model or out / "model.qbam")
    dest.parent.mkdir(parents=True, exist_ok=True)
    export_model(model, dest)
    print(f"wrote {dest} ({len(model.layers)} blocks, source {model.source_hash[:12]})")
    return EXIT_OK


def _infer_on_test(cfg, model):
    _, test = load_datasets(cfg)
    inputs = encode(test, model.timesteps)
    logits, trace = infer_integer(model, inputs)
    return test, logits.mean(axis=0), trace


def cmd_infer(cfg, args) -> int:
    out = cfg.out_dir
    model = import_model(_require(Path(args.model or out / "model.qbam")))
    test, logits, trace = _infer_on_test(cfg, model)
    acc = float(np.mean(logits.argmax(axis=1) == test.labels))
    result = {"accuracy": acc, "flops": trace.flops, "sops": trace.sops,
              "spiking_path_multiplies": trace.spiking_path_multiplies,
              "config_hash": cfg.config_hash()}
    ref_path = out / "eval_logits.npy"
    if ref_path.exists():
        result["max_abs_diff_vs_eval"] = float(np.max(np.abs(np.load(ref_path) - logits)))
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "infer_logits.npy", logits)
    _write_json(out / "infer.json", result)
    for k in sorted(result):
        print(f"{k}={result[k]!r}")
    return EXIT_OK


def cmd_stats(cfg, args) -> int:
    out = cfg.out_dir
    clf = _load_classifier(_require(Path(args.checkpoint or out / "model.qbck")))
    _, test = load_datasets(cfg)
    record = clf.spike_record(test.features)
    chash = cfg.config_hash()
    summary, hist_rows = [], []
    for layer in clf.network_.spiking_layers():
        cap = 1 if layer.kind.value == "binary" else layer.n_max
        st = layer_stats(record[layer.layer_id], cap, float(layer.gamma), layer.layer_id,
                         cfg.stats.threshold)
        summary.append((layer.layer_id, layer.kind.value, f"{st.gamma:.6g}", f"{st.entropy:.4f}",
                        f"{st.capacity:.4f}", st.effective, f"{st.activity:.4f}"))
        probs = st.histogram.probabilities()
        hist_rows += [(layer.layer_id, k, int(c), f"{p:.6g}")
                      for k, (c, p) in enumerate(zip(st.histogram.counts, probs))]
    header = ("layer", "neuron", "gamma", "entropy_bits", "capacity_bits", "effective_levels",
              "activity")
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "stats_summary.tsv", header, summary, chash)
    _write_tsv(out / "stats_histogram.tsv", ("layer", "level", "count", "probability"),
               hist_rows, chash)
    print(f"config_hash={chash}")
    _print_table(header, summary)
    return EXIT_OK


def cmd_energy(cfg, args) -> int:
    out = cfg.out_dir
    model_path = Path(args.model or out / "model.qbam")
    if model_path.exists():
        model = import_model(model_path)
    else:
        model = absorb_scales(checkpoint_load(_require(Path(args.checkpoint or out / "model.qbck"))))
    _, _, trace = _infer_on_test(cfg, model)
    report = report_from_trace(trace)
    rows = [(r["layer"], r["flops"], r["sops"], f"{r['energy_uj']:.6f}") for r in report.per_layer]
    rows.append(("total", report.flops, report.sops, f"{report.energy_microjoules:.6f}"))
    rows.append(("per_sample", f"{report.flops / report.samples:.1f}",
                 f"{report.sops / report.samples:.1f}", f"{report.per_sample_energy:.6f}"))
    header = ("layer", "flops", "sops", "energy_uj")
    chash = cfg.config_hash()
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "energy.tsv", header, rows, chash)
    print(f"config_hash={chash}")
    _print_table(header, rows)
    return EXIT_OK


def run_ablation(cfg, progress=None) -> list[dict]:
    """Train every (neuron, surrogate) pair over the configured seeds."""
    a = cfg.ablation
    neurons = config_mod._split(a.neurons)
    surrogates = config_mod._split(a.surrogates)
    seeds = [int(s) for s in config_mod._split(a.seeds)]
    rows = []
    for neuron, surrogate in itertools.product(neurons, surrogates):
        accs = []
        for seed in seeds:
            train, test = load_datasets(cfg, seed)
            clf = make_classifier(cfg, neuron=neuron, surrogate=surrogate, seed=seed,
                                  timesteps=a.timesteps)
            clf.fit(train.features, train.labels)
            accs.append(float(clf.score(test.features, test.labels)))
        row = {"neuron": neuron, "surrogate": surrogate,
               "n_max": 1 if neuron == "binary" else cfg.neuron.n_max,
               "accuracies": accs, "mean": float(np.mean(accs))}
        rows.append(row)
        if progress:
            progress(row)
    return rows


def cmd_ablate(cfg, args) -> int:
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, progress=lambda r: log.info("%s/%s mean %.4f", r["neuron"],
                                                          r["surrogate"], r["mean"]))
    seeds = config_mod._split(cfg.ablation.seeds)
    header = ("neuron", "surrogate", "n_max", *[f"seed{s}" for s in seeds], "mean")
    table = [(r["neuron"], r["surrogate"], r["n_max"], *[f"{x:.4f}" for x in r["accuracies"]],
              f"{r['mean']:.4f}") for r in rows]
    chash = cfg.config_hash()
    _write_tsv(out / "ablation.tsv", header, table, chash)
    print(f"config_hash={chash}")
    _print_table(header, table)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "absorb": cmd_absorb, "infer": cmd_infer,
            "stats": cmd_stats, "energy": cmd_energy, "ablate": cmd_ablate}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--timesteps", type=int)
    common.add_argument("--nmax", type=int, dest="n_max")
    common.add_argument("--surrogate", choices=["relsg_et", "box_et", "arctan"])
    common.add_argument("--neuron", choices=["qblif", "ilif", "binary"])
    common.add_argument("--out", help="output directory")
    common.add_argument("--checkpoint", help="checkpoint path (default OUT/model.qbck)")
    common.add_argument("--model", help="absorbed model path (default OUT/model.qbam)")

    parser = argparse.ArgumentParser(prog="qblif", description="Burst spiking network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"train": "train a network and write a checkpoint plus metric log",
             "eval": "evaluate a checkpoint on the test split",
             "absorb": "fold scales into weights and write an absorbed model",
             "infer": "run the accumulate-only executor on the test split",
             "stats": "burst histograms, entropy and activity per layer",
             "energy": "operation counts and energy estimate",
             "ablate": "neuron x surrogate ablation grid"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    log.setLevel(getattr(logging, level, logging.WARNING))
    if not log.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
        log.propagate = False


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = config_mod.load_config(args.config) if args.config else config_mod.ExperimentConfig()
        cfg = config_mod.apply_overrides(cfg, seed=args.seed, timesteps=args.timesteps,
                                         n_max=args.n_max, surrogate=args.surrogate,
                                         neuron=args.neuron, out=args.out)
        log.debug("config hash %s", cfg.config_hash())
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except ChecksumError as exc:
        code, msg = EXIT_CHECKSUM, f"checksum error: {exc}"
    except UnsupportedVersionError as exc:
        code, msg = EXIT_VERSION, f"unsupported version: {exc}"
    except FormatError as exc:
        code, msg = EXIT_FORMAT, f"format error: {exc}"
    except NumericFaultError as exc:
        code, msg = EXIT_NUMERIC, f"numeric fault: {exc}"
    except FileNotFoundError as exc:
        code, msg = EXIT_MISSING, f"missing file: {exc}"
    except QBLIFError as exc:
        code, msg = EXIT_ERROR, f"error: {exc}"
    print(msg, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
