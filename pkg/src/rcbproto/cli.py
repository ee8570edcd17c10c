"""``rcbproto`` command line: featurize, synth, train, eval, complexity, dump-embeddings.

Exit codes: 0 success, 1 invalid configuration or input, 2 failure while running.
Every output file goes under ``--out`` (default ``out``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint, complexity, frontend
from .config import ConfigError, RunConfig, build_run_config, read_config_file
from .datagen import speaker_id, synth_corpus
from .embedder import ModelConfig, embed_all, init_params
from .episodic import (
    Corpus,
    InsufficientDataError,
    TrainingDivergedError,
    accuracy_from_embeddings,
    eer_from_embeddings,
    train,
)

log = logging.getLogger("rcbproto")

MANIFEST = "manifest.tsv"
FEATURE_SUFFIX = ".fgf"
CHECKPOINT = "model.ckpt"
LOSS_TRACE = "loss_trace.csv"
METRICS = "metrics.json"
EMBEDDINGS = "embeddings.csv"

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here bad usage is a validation error."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style run configuration file")
    common.add_argument("--seed", type=_u64, help="seed for every random draw")
    common.add_argument("--out", help="output directory (default: out)")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any config file entry, e.g. --set model.M=32",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _ArgumentParser(prog="rcbproto", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    p = sub.add_parser("featurize", parents=[common], help="WAV tree -> log-mel feature files")
    p.add_argument("input_dir", help="directory laid out as <speaker_id>/<sample>.wav")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic speaker corpus")
    p.add_argument("--num-speakers", type=int)
    p.add_argument("--samples-per-speaker", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument(
        "--train-speakers",
        type=int,
        help="also write train.tsv (first N speakers) and test.tsv (the rest)",
    )

    p = sub.add_parser("train", parents=[common], help="episodic training")
    p.add_argument("--manifest")
    p.add_argument("--episodes", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--n-query", type=int)

    p = sub.add_parser("eval", parents=[common], help="few-shot accuracy and verification EER")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--episodes", type=int)
    p.add_argument("--n-way", type=int)
    p.add_argument("--k-shot", type=int)
    p.add_argument("--n-query", type=int)
    p.add_argument("--trials", type=int, help="cap on same-speaker verification trials")
    p.add_argument("--loss-trace", help="training loss trace to reference in the metrics")

    p = sub.add_parser("complexity", parents=[common], help="parameter and MAC accounting")
    p.add_argument("--sweep", help="AXIS=v1,v2,... with AXIS in {I, ML}")
    p.add_argument("--seconds", type=float, default=7.0, help="input duration for the single report")

    p = sub.add_parser("dump-embeddings", parents=[common], help="one CSV row per sample")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    return parser


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _set_overrides(items: Sequence[str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        out.setdefault(section, {})[name] = value.strip()
    return out


def _flag_overrides(args: argparse.Namespace) -> dict[str, dict[str, object]]:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    overrides: dict[str, dict[str, object]] = {
        "run": {"seed": args.seed},
        "paths": {
            "output_dir": args.out,
            "manifest": get("manifest"),
            "checkpoint": get("checkpoint"),
        },
        "synth": {
            "num_speakers": get("num_speakers"),
            "samples_per_speaker": get("samples_per_speaker"),
            "frames": get("frames"),
            "noise_sigma": get("noise_sigma"),
            "train_speakers": get("train_speakers"),
        },
    }
    stage = {"train": "train", "eval": "eval"}.get(args.command)
    if stage:
        overrides[stage] = {
            "episodes": get("episodes"),
            "n_way": get("n_way"),
            "k_shot": get("k_shot"),
            "n_query": get("n_query"),
        }
        if stage == "train":
            overrides["train"]["learning_rate"] = get("lr")
        else:
            overrides["eval"]["trials"] = get("trials")
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else {}
    merged: dict[str, dict[str, object]] = {}
    for source in (_set_overrides(args.set), _flag_overrides(args)):
        for section, values in source.items():
            merged.setdefault(section, {}).update({k: v for k, v in values.items() if v is not None})
    return build_run_config(file_values, merged)


def _require_file(path: Optional[str], what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_featurize(args: argparse.Namespace, cfg: RunConfig) -> int:
    src = Path(args.input_dir)
    if not src.is_dir():
        raise ConfigError(f"input directory not found: {src}")
    out = _out_dir(cfg)
    wavs = sorted(p for p in src.glob("*/*.wav") if p.is_file())
    records, failures = [], 0
    for wav in wavs:
        rel = Path("features") / wav.parent.name / (wav.stem + FEATURE_SUFFIX)
        try:
            feature = frontend.log_mel(frontend.read_wav(wav), n_mels=cfg.model.H)
        except (frontend.AudioError, OSError) as exc:
            log.warning("skipping %s: %s", wav, exc)
            failures += 1
            continue
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        frontend.write_features(out / rel, feature)
        records.append((wav.parent.name, rel.as_posix()))
    manifest = out / MANIFEST
    frontend.write_manifest(manifest, records)
    print(manifest)
    if wavs and failures == len(wavs):
        log.error("every input file failed")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = cfg.synth_spec()
    out = _out_dir(cfg)
    records = []
    for j, feature in enumerate(synth_corpus(spec)):
        spk = feature.speaker_label
        rel = Path("features") / spk / f"{j % spec.samples_per_speaker:04d}{FEATURE_SUFFIX}"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        frontend.write_features(out / rel, feature)
        records.append((spk, rel.as_posix()))
    frontend.write_manifest(out / MANIFEST, records)
    if cfg.train_speakers is not None:
        train_ids = {speaker_id(s) for s in range(cfg.train_speakers)}
        frontend.write_manifest(out / "train.tsv", [r for r in records if r[0] in train_ids])
        frontend.write_manifest(out / "test.tsv", [r for r in records if r[0] not in train_ids])
    print(out / MANIFEST)
    return EXIT_OK


def _load_corpus(path: Optional[str]) -> Corpus:
    corpus = Corpus.from_manifest(_require_file(path, "manifest"))
    if not len(corpus):
        raise ConfigError(f"manifest {path} lists no samples")
    return corpus


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    spec = cfg.train_spec()
    corpus = _load_corpus(cfg.paths.manifest)
    out = _out_dir(cfg)
    bad = [f for f in corpus.features if f.n_mels != cfg.model.H]
    if bad:
        raise ConfigError(f"features have {bad[0].n_mels} mel rows, model expects H={cfg.model.H}")
    params = init_params(cfg.model, spec.seed)
    result = train(
        spec,
        corpus,
        cfg.model,
        params,
        on_episode=lambda ep, loss: log.info("episode %d loss %.6f", ep, loss),
    )
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / CHECKPOINT
    checkpoint.save(ckpt, result.params, cfg.model)
    with open(out / LOSS_TRACE, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "loss"])
        for ep, loss in enumerate(result.losses):
            writer.writerow([ep, repr(loss)])
    print(ckpt)
    return EXIT_OK


def _corpus_embeddings(cfg: RunConfig) -> tuple[Corpus, np.ndarray, ModelConfig]:
    params, model = checkpoint.load(_require_file(cfg.paths.checkpoint, "checkpoint"))
    corpus = _load_corpus(cfg.paths.manifest)
    emb = embed_all([f.values for f in corpus.features], params, model)
    return corpus, emb, model


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    ev = cfg.eval
    corpus, emb, model = _corpus_embeddings(cfg)
    accuracy = accuracy_from_embeddings(
        emb, corpus, ev.n_way, ev.k_shot, ev.episodes, cfg.seed, model.distance, ev.n_query
    )
    try:
        eer: Optional[float] = eer_from_embeddings(emb, corpus, ev.trials, cfg.seed)
    except InsufficientDataError as exc:
        log.warning("no EER: %s", exc)
        eer = None
    metrics = {
        "accuracy": accuracy,
        "eer": eer,
        "episodes": ev.episodes,
        "n_way": ev.n_way,
        "k_shot": ev.k_shot,
        "seed": cfg.seed,
        "loss_trace_path": args.loss_trace,
    }
    _write_json(_out_dir(cfg) / METRICS, metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def _parse_sweep(text: str) -> tuple[str, list[int]]:
    axis, sep, values = text.partition("=")
    axis = axis.strip()
    if not sep or axis not in ("I", "ML"):
        raise ConfigError(f"--sweep expects I=... or ML=..., got {text!r}")
    try:
        return axis, [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"sweep values must be integers: {values!r}") from None


def cmd_complexity(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if args.sweep:
        axis, values = _parse_sweep(args.sweep)
        try:
            rows = complexity.sweep(cfg.model, axis, values)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        table = complexity.sweep_csv(rows)
        (out / f"complexity_{axis}.csv").write_text(table, encoding="utf-8")
        (out / f"complexity_{axis}.json").write_text(
            complexity.sweep_json(axis, rows) + "\n", encoding="utf-8"
        )
        sys.stdout.write(table)
        return EXIT_OK
    if args.seconds <= 0:
        raise ConfigError("--seconds must be positive")
    rep = complexity.report(cfg.model, complexity.frames_for_seconds(args.seconds))
    doc = {"seconds": args.seconds, "report": rep.to_dict()}
    doc["reference_comparison"] = complexity.reference_comparison(cfg.model)
    _write_json(out / "complexity.json", doc)
    print(json.dumps({"param_count": rep.param_count, "macs": rep.macs, "n_frames": rep.n_frames}))
    return EXIT_OK


def cmd_dump_embeddings(args: argparse.Namespace, cfg: RunConfig) -> int:
    corpus, emb, _ = _corpus_embeddings(cfg)
    path = _out_dir(cfg) / EMBEDDINGS
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["speaker_id", "path"] + [f"v{i}" for i in range(emb.shape[1])])
        for feature, src, row in zip(corpus.features, corpus.paths, emb):
            writer.writerow([feature.speaker_label, src] + [repr(float(v)) for v in row])
    print(path)
    return EXIT_OK


COMMANDS = {
    "featurize": cmd_featurize,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "complexity": cmd_complexity,
    "dump-embeddings": cmd_dump_embeddings,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, InsufficientDataError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except (
        TrainingDivergedError,
        frontend.FeatureFileError,
        checkpoint.CheckpointError,
        OSError,
        ValueError,
        FloatingPointError,
    ) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
