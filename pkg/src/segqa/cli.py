"""Command line orchestration of the quality-estimation workflow.

One run is one directory (``--out``)::

    config.json              resolved configuration
    data/                    source slices + manifest.json      (synth | ingest)
    corpus/                  graded candidates + manifest.json  (corpus)
    recnet/                  REC-Net training run               (train-rec)
    regnet_<mode>/           regressor training runs            (train-reg)
    attack/sweep_*.csv       FGSM sweep tables                  (attack)
    report/                  report.{json,csv,md} + plots       (report)
    manifests/<command>.json provenance for each command

Commands only read and write inside their own run directory.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import attack, config, evaluation, models, train
from .data import build_quality_corpus, generate_synthetic_dataset, load_samples
from .data.storage import DatasetManifest
from .errors import MissingArtifactError, SegQAError

log = logging.getLogger("segqa")

COMMANDS = ("synth", "ingest", "corpus", "train-rec", "train-reg", "attack", "report")


class Run:
    def __init__(self, out, cfg):
        self.root = Path(out)
        self.cfg = cfg

    def path(self, *parts):
        return self.root.joinpath(*parts)

    def require(self, rel, producer, what):
        p = self.path(rel)
        if not p.exists():
            raise MissingArtifactError(f"{what} ({p})", f"segqa {producer} --out {self.root}")
        return p

    def source_manifest(self):
        p = self.path("data", "manifest.json")
        if not p.exists():
            raise MissingArtifactError(f"source dataset ({p})", "segqa synth` or `segqa ingest")
        return DatasetManifest.load(p)

    def corpus_manifest(self):
        return DatasetManifest.load(self.require("corpus/manifest.json", "corpus", "quality corpus"))

    def recnet(self):
        return models.load_model(self.require("recnet/best", "train-rec", "REC-Net checkpoint"))

    def regnet(self, mode):
        return models.load_model(self.require(f"regnet_{mode}/best", f"train-reg --mode {mode}",
                                              f"{mode} regressor checkpoint"))

    def write_manifest(self, command, inputs, outputs, seed, started):
        record = {
            "command": command,
            "config_hash": config.digest(self.cfg),
            "seed": seed,
            "inputs": {str(p.relative_to(self.root)): _hash_path(p) for p in inputs},
            "outputs": {str(p.relative_to(self.root)): _hash_path(p) for p in outputs},
            "wall_time_s": round(time.time() - started, 3),
        }
        path = self.path("manifests", f"{command}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(record, indent=2, sort_keys=True))
        return path


def _hash_path(p):
    """sha256 of a file, or of the sorted (relative name, file hash) list of a directory."""
    p = Path(p)
    if p.is_file():
        return hashlib.sha256(p.read_bytes()).hexdigest()
    h = hashlib.sha256()
    for f in sorted(q for q in p.rglob("*") if q.is_file()):
        h.update(str(f.relative_to(p)).encode())
        h.update(hashlib.sha256(f.read_bytes()).digest())
    return h.hexdigest()


def _train_config(section, seed):
    return train.TrainConfig(seed=seed, **section)


def cmd_synth(run, args):
    d = run.cfg["data"]
    out = run.path("data")
    generate_synthetic_dataset(d["count"], d["image_size"], run.cfg["seed"], out, tuple(d["fractions"]))
    return [], [out / "manifest.json"]


def cmd_ingest(run, args):
    from .data.acdc import ingest_acdc
    d = run.cfg["data"]
    if not d["acdc_root"]:
        raise SegQAError(f"no ACDC root: set data.acdc_root or ${config.DATA_ROOT_ENV}")
    out = run.path("data")
    ingest_acdc(d["acdc_root"], d["structure"], run.cfg["seed"], out, d["image_size"], tuple(d["fractions"]))
    return [], [out / "manifest.json"]


def cmd_corpus(run, args):
    c = run.cfg["data"]["corpus"]
    manifest = run.source_manifest()
    segmenter = None
    inputs = [run.path("data", "manifest.json")]
    if c["undertrained_segmenter"]:
        s = run.cfg["models"]["segmenter"]
        segmenter = models.build_segmenter(s["depth"], s["base_width"], run.cfg["seed"],
                                           run.cfg["data"]["image_size"])
        tcfg = train.TrainConfig(epochs=s["epochs"], seed=run.cfg["seed"])
        segmenter = train.train_segmenter(segmenter, manifest, tcfg, run.path("segmenter"))
    out = run.path("corpus")
    build_quality_corpus(manifest, c["bins"], c["per_bin"], run.cfg["seed"], out, c["max_attempts"], segmenter)
    return inputs, [out / "manifest.json"]


def cmd_train_rec(run, args):
    manifest = run.source_manifest()
    m = run.cfg["models"]["recnet"]
    seed = run.cfg["seed"]
    model = models.build_recnet(m["depth"], m["base_width"], seed, run.cfg["data"]["image_size"])
    out = run.path("recnet")
    train.train_recnet(model, manifest, _train_config(run.cfg["train"]["recnet"], seed), out)
    return [run.path("data", "manifest.json")], [out / "best"]


def cmd_train_reg(run, args):
    modes = [args.mode] if args.mode else run.cfg["attack"]["modes"]
    corpus = run.corpus_manifest()
    recnet = run.recnet() if "proposed" in modes else None
    m = run.cfg["models"]["regnet"]
    seed = run.cfg["seed"]
    inputs = [run.path("corpus", "manifest.json")] + ([run.path("recnet", "best")] if recnet else [])
    outputs = []
    for mode in modes:
        model = models.build_regnet(mode, seed, run.cfg["data"]["image_size"], m["widths"], m["hidden"])
        out = run.path(f"regnet_{mode}")
        train.train_regressor(model, recnet if mode == "proposed" else None, corpus,
                              _train_config(run.cfg["train"]["regnet"], seed), out)
        outputs.append(out / "best")
    return inputs, outputs


def _attack_plan(run, args):
    modes = [args.mode] if args.mode else run.cfg["attack"]["modes"]
    surfaces = [args.surface] if args.surface else run.cfg["attack"]["surfaces"]
    for mode in modes:
        for surface in surfaces:
            if surface == "difference_image" and mode == "baseline":
                continue
            yield mode, surface


def cmd_attack(run, args):
    a = run.cfg["attack"]
    corpus = run.corpus_manifest()
    test = load_samples(corpus, "test")
    plan = list(_attack_plan(run, args))
    recnet = run.recnet() if any(m == "proposed" for m, _ in plan) else None
    regnets = {mode: run.regnet(mode) for mode, _ in plan}
    outputs = []
    for mode, surface in plan:
        pipeline = attack.Pipeline(regnets[mode], recnet if mode == "proposed" else None, name=mode)
        rows = attack.sweep(pipeline, test, attack.AttackConfig(tuple(a["epsilons"]), surface), a["batch_size"])
        outputs.append(attack.write_sweep_csv(rows, run.path("attack", f"sweep_{mode}_{surface}.csv")))
        log.info("%s/%s: %d rows", mode, surface, len(rows))
    inputs = [run.path("corpus", "manifest.json")] + [run.path(f"regnet_{m}", "best") for m in regnets]
    if recnet is not None:
        inputs.append(run.path("recnet", "best"))
    return inputs, outputs


def cmd_report(run, args):
    csvs = sorted(run.path("attack").glob("sweep_*.csv")) if run.path("attack").exists() else []
    if not csvs:
        raise MissingArtifactError(f"sweep tables in {run.path('attack')}", f"segqa attack --out {run.root}")
    provenance = {
        "config_hash": config.digest(run.cfg),
        "seed": run.cfg["seed"],
        "sweeps": {p.name: _hash_path(p) for p in csvs},
        "checkpoints": {},
    }
    for name in ["recnet"] + [f"regnet_{m}" for m in models.MODES]:
        p = run.path(name, "best", "model.json")
        if p.exists():
            provenance["checkpoints"][name] = json.loads(p.read_text())["digest"]
    tables = [attack.read_sweep_csv(p) for p in csvs]
    report = evaluation.build_report(tables, provenance, run.cfg["eval"]["trend_tolerance"])
    out = run.path("report")
    report.write(out)
    outputs = [out / "report.json", out / "report.csv", out / "report.md"]
    if run.cfg["eval"]["plots"]:
        outputs += evaluation.emit_plot_data(report, out / "plots")
    print(report.to_markdown(), end="")
    failed = [k for k, c in report.checks.items() if not c["passed"]]
    if failed:
        log.warning("report checks failed: %s", ", ".join(failed))
    return csvs, outputs


HANDLERS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "corpus": cmd_corpus, "train-rec": cmd_train_rec,
    "train-reg": cmd_train_reg, "attack": cmd_attack, "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="segqa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS + ("run",):
        p = sub.add_parser(name, help="synth -> corpus -> train-rec -> train-reg -> attack -> report"
                           if name == "run" else None)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="run directory")
        p.add_argument("--epsilons", type=lambda s: [float(x) for x in s.split(",") if x],
                       help="comma separated, e.g. 0,0.05,0.1")
        p.add_argument("--mode", choices=models.MODES)
        p.add_argument("--surface", choices=attack.SURFACES)
    return parser


def resolve_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = str(args.out)
    if args.epsilons is not None:
        overrides["attack"] = {"epsilons": args.epsilons}
    out = Path(overrides.get("out") or config.DEFAULTS["out"])
    saved = out / "config.json"
    if args.config is None and saved.exists():
        base = config.load(saved)
    else:
        base = config.load(args.config)
    cfg = config.validate(config.merge(base, overrides))
    return cfg


def run_command(name, run, args):
    started = time.time()
    inputs, outputs = HANDLERS[name](run, args)
    run.write_manifest(name, inputs, outputs, run.cfg["seed"], started)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        run = Run(cfg["out"], cfg)
        run.root.mkdir(parents=True, exist_ok=True)
        run.path("config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
        if args.command == "run":
            first = "ingest" if cfg["data"]["source"] == "acdc" else "synth"
            for name in (first, "corpus", "train-rec", "train-reg", "attack", "report"):
                run_command(name, run, args)
        else:
            run_command(args.command, run, args)
    except (SegQAError, OSError) as exc:
        print(f"segqa {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
