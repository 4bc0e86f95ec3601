"""Command-line entry point: enhance | mix | train-toy | eval | bench | embed | inspect."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import dsp
from .audio_io import read_wav, write_wav
from .container import load_container, save_embedding
from .errors import DataError, PseError, UsageError
from .losses import LossWeights
from .mixer import CategoryDistribution, generate_dataset, read_manifest
from .model import Model, ModelConfig, SpeakerEmbedding, build_model, load_model, save_model

log = logging.getLogger("pse")


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors (default would exit 2)."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_config_file(path: str) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


_DSP_KEYS = {"sample_rate": int, "win_ms": float, "overlap": float,
             "lookahead_frames": int, "erb_bands": int, "f_df": float,
             "df_order": int, "norm_tau_s": float}
_MODEL_KEYS = {"conv_channels": int, "erb_gru_hidden": int, "df_gru_hidden": int,
               "junction_groups": int}
_TRAIN_KEYS = {"lr": float, "weight_decay": float, "batch_start": int,
               "batch_cap": int, "patience": int,
               "lambda_spec": float, "lambda_mr": float, "lambda_os": float}


def _split_config(values: dict):
    known = {**_DSP_KEYS, **_MODEL_KEYS, **_TRAIN_KEYS}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
    out = {k: known[k](v) for k, v in values.items()}
    return (
        {k: v for k, v in out.items() if k in _DSP_KEYS},
        {k: v for k, v in out.items() if k in _MODEL_KEYS},
        {k: v for k, v in out.items() if k in _TRAIN_KEYS},
    )


def _effective_jobs(requested: int) -> int:
    cap = os.environ.get("PSE_NUM_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise UsageError(f"PSE_NUM_THREADS must be an integer, got {cap!r}")
    return max(1, requested)


def _load_examples(manifest_path: str, embeddings_dir: str | None, wants_embedding: bool):
    from .bench import load_speaker_embeddings
    from .training import TrainExample

    entries = read_manifest(manifest_path)
    table = {}
    if wants_embedding:
        if embeddings_dir is None:
            raise UsageError("--embeddings-dir is required for personalized variants")
        table = load_speaker_embeddings(embeddings_dir, [e.target_speaker for e in entries])
    examples = []
    for entry in entries:
        examples.append(TrainExample(
            mixture=read_wav(entry.clip),
            clean=read_wav(entry.clean),
            embedding=table.get(entry.target_speaker) if wants_embedding else None,
        ))
    return examples


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_enhance(args) -> int:
    model = load_model(args.model)
    if args.variant and args.variant != model.variant:
        raise UsageError(
            f"--variant {args.variant} contradicts model file variant {model.variant}"
        )
    emb = None
    if model.wants_embedding:
        if not args.embedding:
            raise UsageError(
                f"model variant {model.variant!r} needs --embedding (no baseline fallback)"
            )
        emb = SpeakerEmbedding.load(args.embedding)
    elif args.embedding:
        raise UsageError("baseline model takes no --embedding")
    audio = read_wav(getattr(args, "in"))
    if audio.sample_rate != model.cfg.dsp.sample_rate:
        raise DataError(
            f"input is {audio.sample_rate} Hz but the model expects "
            f"{model.cfg.dsp.sample_rate} Hz (no resampling in the enhance path)"
        )
    out = model.enhance_offline(audio, emb)
    write_wav(args.out, out)
    return 0


def _cmd_mix(args) -> int:
    dist = CategoryDistribution(draw_mode=args.dist)
    manifest = generate_dataset(
        args.target_dir, args.interf_dir, args.noise_dir, args.hours,
        dist, args.seed, args.out, clip_secs=args.clip_secs,
    )
    print(manifest)
    return 0


def _cmd_train_toy(args) -> int:
    from .plots import render_loss_curves
    from .training import TrainConfig, toy_train, write_history_csv

    dsp_kwargs, model_kwargs, train_kwargs = _split_config(
        _read_config_file(args.config) if args.config else {}
    )
    train_examples = _load_examples(args.manifest, args.embeddings_dir,
                                    args.variant != "baseline")
    val_examples = _load_examples(args.val_manifest, args.embeddings_dir,
                                  args.variant != "baseline")
    if not train_examples:
        raise UsageError("training manifest is empty")
    data_sr = train_examples[0].mixture.sample_rate
    dsp_kwargs.setdefault("sample_rate", data_sr)
    if dsp_kwargs["sample_rate"] != data_sr:
        raise DataError(
            f"config sample_rate {dsp_kwargs['sample_rate']} != data rate {data_sr}"
        )
    cfg = ModelConfig(dsp=dsp.DspConfig(**dsp_kwargs), variant=args.variant,
                      seed=args.seed, **model_kwargs)
    model = build_model(cfg)
    weights = LossWeights(
        lambda_spec=train_kwargs.pop("lambda_spec", 1e3),
        lambda_mr=train_kwargs.pop("lambda_mr", 5e2),
        lambda_os=train_kwargs.pop("lambda_os", 5e2),
    )
    tc = TrainConfig(max_epochs=args.epochs, seed=args.seed, weights=weights,
                     **train_kwargs)
    if args.checkpoint_dir:
        os.makedirs(args.checkpoint_dir, exist_ok=True)
    best, history = toy_train(model, train_examples, val_examples, tc,
                              checkpoint_dir=args.checkpoint_dir,
                              log=lambda msg: print(msg, file=sys.stderr))
    save_model(model, args.out, params=best)
    write_history_csv(history, args.out + ".losses.csv")
    render_loss_curves(history, args.out + ".losses.png")
    print(args.out)
    return 0


def _cmd_eval(args) -> int:
    from .bench import evaluate
    from .plots import render_eval_boxplot

    model = load_model(args.model)
    report = evaluate(model, args.manifest, args.embeddings_dir,
                      jobs=_effective_jobs(args.jobs))
    paths = report.write(args.report)
    render_eval_boxplot(report, args.report + ".png")
    paths.append(args.report + ".png")
    sys.stdout.write(report.to_text())
    for path in paths:
        log.info("wrote %s", path)
    return 0


def _cmd_bench(args) -> int:
    from .bench import ComplexityReport, measure_rtf

    model = load_model(args.model)
    report = measure_rtf(model, seconds=args.secs, repetitions=args.reps,
                         seed=args.seed)
    print(ComplexityReport.CSV_HEADER)
    print(report.csv_row())
    return 0


def _cmd_embed(args) -> int:
    from .metrics import toy_embed

    audio = read_wav(getattr(args, "in"))
    emb = toy_embed(audio)
    save_embedding(emb.values.astype(np.float32), args.out, raw=True)
    return 0


def _cmd_inspect(args) -> int:
    store = load_container(args.model)
    print(f"container: {args.model}")
    print(f"metadata ({len(store.metadata)}):")
    for key, value in store.metadata.items():
        print(f"  {key} = {value}")
    print(f"tensors ({len(store.tensors)}):")
    for name, tensor in store.tensors.items():
        shape = "x".join(str(d) for d in tensor.shape)
        print(f"  {name}  [{shape}]  {tensor.dtype}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pse", description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="key=value config file; flags win on conflict")
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker cap for per-clip parallel stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance a WAV file with a trained model")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--embedding")
    p.add_argument("--variant", help="optional cross-check against the model file")
    p.set_defaults(fn=_cmd_enhance)

    p = sub.add_parser("mix", help="synthesize a mixture dataset")
    p.add_argument("--target-dir", required=True)
    p.add_argument("--interf-dir", required=True)
    p.add_argument("--noise-dir", required=True)
    p.add_argument("--hours", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dist", choices=("gaussian", "uniform"), default="gaussian")
    p.add_argument("--clip-secs", type=float, default=5.0)
    p.set_defaults(fn=_cmd_mix)

    p = sub.add_parser("train-toy", help="desk-scale training run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest", required=True)
    p.add_argument("--embeddings-dir")
    p.add_argument("--variant", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--checkpoint-dir")
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("eval", help="score a model over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--embeddings-dir")
    p.add_argument("--report", required=True,
                   help="output prefix for .csv/.txt/.png reports")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("bench", help="complexity report (params, MACs, RTF)")
    p.add_argument("--model", required=True)
    p.add_argument("--secs", type=float, default=30.0)
    p.add_argument("--reps", type=int, default=5)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("embed", help="toy enrollment embedder")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("inspect", help="dump container metadata and tensor shapes")
    p.add_argument("--model", required=True)
    p.set_defaults(fn=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except PseError as exc:
        print(f"pse {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"pse {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric catch-all -> 3
        print(f"pse {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
