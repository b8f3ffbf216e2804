"""Command-line entry point: data synthesis, training, generation, evaluation,
statistical analysis, and export of plot data plus rendered figures.

Exit codes: 0 success, 2 argument errors, 3 I/O errors, 4 validation errors
(corrupt checkpoints, malformed matrices, invariant violations).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import torch

from . import analysis, plots
from .data import Label, generate_synthetic_cohort, split_cohort
from .errors import (
    DimensionError,
    FormatError,
    StateError,
    StratificationError,
    ValidationError,
)
from .diffusion import ddpm_sample
from .fileio import load_cohort, load_matrix, save_cohort, save_matrix
from .pipeline import PipelineConfig, tiny_pipeline_config
from .training import (
    TrainConfig,
    load_model,
    reconstruct_networks,
    train_loop,
)


class CliError(Exception):
    """Argument-level error; maps to exit code 2."""


def _write_summary(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


# --- run config file ------------------------------------------------------------

_TRAIN_KEYS = {f.name: f.type for f in dataclass_fields(TrainConfig)}
_PATH_KEYS = ("data_dir", "out_dir")
_EXTRA_KEYS = ("test_fraction", "model_preset", "w_fe", "w_ldm", "w_c")


def parse_run_config(path: str | Path) -> dict:
    """Parse the flat key = value run config; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    allowed = (set(_TRAIN_KEYS) | set(_PATH_KEYS) | set(_EXTRA_KEYS)) - {"loss_weights"}
    raw: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise CliError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in allowed or key == "loss_weights":
            raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
        raw[key] = value
    return raw


def _build_configs(raw: dict) -> tuple[PipelineConfig, TrainConfig, dict]:
    preset = raw.get("model_preset", "default")
    if preset == "default":
        pipeline_cfg = PipelineConfig()
    elif preset == "tiny":
        pipeline_cfg = tiny_pipeline_config()
    else:
        raise CliError(f"unknown model_preset {preset!r} (use 'default' or 'tiny')")

    kwargs = {}
    for key in ("learning_rate", "beta_start", "beta_end", "grad_clip", "logit_token_dropout"):
        if key in raw:
            kwargs[key] = float(raw[key])
    for key in ("batch_size", "epochs", "seed", "schedule_T", "checkpoint_every"):
        if key in raw:
            kwargs[key] = int(raw[key])
    weights = (
        float(raw.get("w_fe", 1.0)),
        float(raw.get("w_ldm", 1.0)),
        float(raw.get("w_c", 1.0)),
    )
    try:
        train_cfg = TrainConfig(loss_weights=weights, **kwargs)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    extras = {
        "test_fraction": float(raw.get("test_fraction", 0.1)),
        "data_dir": raw.get("data_dir"),
        "out_dir": raw.get("out_dir"),
    }
    return pipeline_cfg, train_cfg, extras


# --- commands --------------------------------------------------------------------


def cmd_synth_data(args) -> int:
    for name in ("nc", "emci", "lmci"):
        if getattr(args, name) < 0:
            raise CliError(f"--{name} must be >= 0")
    records = generate_synthetic_cohort(args.nc, args.emci, args.lmci, args.seed)
    out = Path(args.out)
    save_cohort(records, out, seed=args.seed)
    by_label = {lab.name: sum(1 for r in records if r.label == lab) for lab in Label}
    _write_summary(out, {"command": "synth-data", "n_subjects": len(records),
                         "by_label": by_label, "seed": args.seed})
    print(f"wrote {len(records)} subjects to {out}")
    return 0


def cmd_train(args) -> int:
    raw = parse_run_config(args.config)
    pipeline_cfg, train_cfg, extras = _build_configs(raw)
    data_dir = args.data or extras["data_dir"]
    out_dir = args.out or extras["out_dir"]
    if not data_dir:
        raise CliError("no data directory (set data_dir in config or pass --data)")
    if not out_dir:
        raise CliError("no output directory (set out_dir in config or pass --out)")
    records = load_cohort(data_dir)
    split = split_cohort(records, extras["test_fraction"], train_cfg.seed)
    out_dir = Path(out_dir)
    state = train_loop(split, pipeline_cfg, train_cfg, out_dir=out_dir)
    last = state.loss_history[-1] if state.loss_history else {}
    summary = {
        "command": "train",
        "epochs": state.epoch,
        "steps": state.step,
        "n_train": len(split.train),
        "n_test": len(split.test),
        "final_losses": {k: last.get(k) for k in ("fe", "ldm", "classification", "total")},
        "checkpoint": "final.ckpt",
    }
    if state.epoch_metrics and "accuracy" in state.epoch_metrics[-1]:
        summary["metrics"] = {
            k: state.epoch_metrics[-1][k]
            for k in ("accuracy", "sensitivity", "specificity", "f1")
        }
    _write_summary(out_dir, summary)
    print(f"trained {state.epoch} epochs ({state.step} steps); checkpoint at {out_dir/'final.ckpt'}")
    return 0


def cmd_generate(args) -> int:
    if args.n < 1:
        raise CliError("--n must be >= 1")
    label = Label.from_name(args.label)
    model, schedule, pipeline_cfg = load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator()
    gen.manual_seed(args.seed)
    with torch.no_grad():
        context = model.conditioner(torch.tensor([int(label)]), None)
    names = []
    for k in range(args.n):
        net = ddpm_sample(
            model.denoiser, model.decoder, schedule, context, gen, pipeline_cfg.latent_shape
        )
        name = f"gen_{label.name.lower()}_{k:03d}.csv"
        save_matrix(net, out / name)
        names.append(name)
    _write_summary(out, {"command": "generate", "label": label.name, "n": args.n,
                         "seed": args.seed, "files": names})
    print(f"wrote {args.n} sampled networks to {out}")
    return 0


def cmd_evaluate(args) -> int:
    model, _, _ = load_model(args.checkpoint)
    records = load_cohort(args.data)
    if not records:
        raise CliError(f"no subjects in {args.data}")
    networks, predictions = reconstruct_networks(model, records)
    out = Path(args.out)
    recon_dir = out / "reconstructed"
    recon_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for rec, net in zip(records, networks):
        save_matrix(net, recon_dir / f"{rec.subject_id}.csv")
        manifest.append({"subject_id": rec.subject_id, "label": rec.label.name,
                         "network": f"{rec.subject_id}.csv"})
    (recon_dir / "manifest.json").write_text(
        json.dumps({"subjects": manifest}, indent=2, sort_keys=True) + "\n"
    )
    with (out / "predictions.csv").open("w") as fh:
        fh.write("subject_id,logit0,logit1,logit2,predicted\n")
        for rec, pred in zip(records, predictions):
            logits = ",".join(repr(float(v)) for v in pred.logits)
            fh.write(f"{rec.subject_id},{logits},{pred.predicted}\n")
    cm = analysis.ConfusionMatrix.from_labels(
        [int(r.label) for r in records], [p.predicted for p in predictions]
    )
    metrics = analysis.compute_metrics(cm)
    _write_summary(out, {"command": "evaluate", "n_subjects": len(records),
                         "confusion_matrix": cm.counts.tolist(), "metrics": metrics})
    for key in ("accuracy", "sensitivity", "specificity", "f1"):
        print(f"{key}: {metrics[key]:.2f}%")
    return 0


def _matrix_dir(path: Path) -> Path:
    for candidate in (path, path / "networks", path / "reconstructed"):
        if candidate.is_dir() and list(candidate.glob("*.csv")):
            return candidate
    raise CliError(f"no matrix CSVs found under {path}")


def _load_matrix_map(directory: Path) -> dict[str, object]:
    return {p.stem: load_matrix(p) for p in sorted(directory.glob("*.csv"))}


def cmd_analyze(args) -> int:
    gen_dir = _matrix_dir(Path(args.generated))
    ref_dir = _matrix_dir(Path(args.reference))
    generated = _load_matrix_map(gen_dir)
    reference = _load_matrix_map(ref_dir)
    common = sorted(set(generated) & set(reference))
    if len(common) < 2:
        raise CliError(
            f"need >= 2 subjects present in both directories, found {len(common)}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results = analysis.edgewise_comparison(
        [generated[s] for s in common], [reference[s] for s in common],
        paired=True, threshold=args.threshold,
    )
    n_sig = analysis.export_chord_data(results, out / "chord_paired.csv")
    plots.render_chord(analysis.load_chord_data(out / "chord_paired.csv"),
                       out / "chord_paired.png",
                       title="generated vs reference")
    summary = {
        "command": "analyze",
        "n_subjects": len(common),
        "threshold": args.threshold,
        "paired": {
            "n_significant": n_sig,
            "n_declined": sum(1 for r in results if r.significant and r.direction == "declined"),
            "n_enhanced": sum(1 for r in results if r.significant and r.direction == "enhanced"),
        },
    }

    if args.groups:
        labels = _load_labels(gen_dir)
        groups = {lab: [generated[s] for s in common if labels.get(s) == lab.name]
                  for lab in Label}
        contrasts = {}
        for a, b in ((Label.NC, Label.EMCI), (Label.NC, Label.LMCI), (Label.EMCI, Label.LMCI)):
            if len(groups[a]) < 2 or len(groups[b]) < 2:
                continue
            res = analysis.edgewise_comparison(groups[a], groups[b], paired=False,
                                               threshold=args.threshold)
            tag = f"{a.name.lower()}_vs_{b.name.lower()}"
            n = analysis.export_chord_data(res, out / f"chord_{tag}.csv")
            plots.render_chord(analysis.load_chord_data(out / f"chord_{tag}.csv"),
                               out / f"chord_{tag}.png",
                               title=f"{a.name} vs {b.name}")
            contrasts[tag] = {
                "n_significant": n,
                "n_declined": sum(1 for r in res if r.significant and r.direction == "declined"),
                "n_enhanced": sum(1 for r in res if r.significant and r.direction == "enhanced"),
            }
        summary["group_contrasts"] = contrasts

    _write_summary(out, summary)
    print(f"paired comparison: {n_sig} significant edges "
          f"({summary['paired']['n_declined']} declined, "
          f"{summary['paired']['n_enhanced']} enhanced)")
    return 0


def _load_labels(matrix_dir: Path) -> dict[str, str]:
    manifest_path = matrix_dir / "manifest.json"
    if not manifest_path.exists():
        manifest_path = matrix_dir.parent / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"--groups needs a manifest.json near {matrix_dir}")
    manifest = json.loads(manifest_path.read_text())
    return {Path(s.get("network", s["subject_id"])).stem: s["label"]
            for s in manifest["subjects"]}


def cmd_export(args) -> int:
    results_dir = Path(args.results)
    if not results_dir.is_dir():
        raise CliError(f"results directory not found: {results_dir}")
    out = Path(args.out) if args.out else results_dir
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.format == "chord":
        csvs = sorted(results_dir.rglob("chord_*.csv"))
        if not csvs:
            raise CliError(f"no chord_*.csv files under {results_dir}")
        for csv_path in csvs:
            png = out / (csv_path.stem + ".png")
            plots.render_chord(analysis.load_chord_data(csv_path), png,
                               title=csv_path.stem.replace("_", " "))
            written.append(png.name)
    else:  # radar
        metrics_by_method = {}
        for summary_path in sorted(results_dir.rglob("summary.json")):
            payload = json.loads(summary_path.read_text())
            if "metrics" in payload:
                metrics_by_method[summary_path.parent.name] = payload["metrics"]
        if not metrics_by_method:
            raise CliError(f"no summary.json with metrics under {results_dir}")
        analysis.export_radar_data(metrics_by_method, out / "radar.csv")
        plots.render_radar(analysis.load_radar_data(out / "radar.csv"), out / "radar.png")
        written = ["radar.csv", "radar.png"]
    _write_summary(out, {"command": "export", "format": args.format, "files": written})
    print(f"wrote {len(written)} file(s) to {out}")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="connectogen",
        description="Synthesize, train on, and analyze structural brain networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic cohort")
    p.add_argument("--out", required=True, help="output cohort directory")
    p.add_argument("--nc", type=int, default=87, help="number of NC subjects")
    p.add_argument("--emci", type=int, default=74, help="number of EMCI subjects")
    p.add_argument("--lmci", type=int, default=31, help="number of LMCI subjects")
    p.add_argument("--seed", type=int, default=0, help="cohort RNG seed")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the full pipeline")
    p.add_argument("--config", required=True, help="flat key = value run config file")
    p.add_argument("--data", help="cohort directory (overrides config data_dir)")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample label-conditioned networks")
    p.add_argument("--checkpoint", required=True, help="training checkpoint file")
    p.add_argument("--label", required=True, choices=[l.name for l in Label],
                   help="conditioning class label")
    p.add_argument("--n", type=int, default=1, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="sampling RNG seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="reconstruct, classify, and score a cohort")
    p.add_argument("--checkpoint", required=True, help="training checkpoint file")
    p.add_argument("--data", required=True, help="cohort directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="edge-wise statistical comparison")
    p.add_argument("--generated", required=True, help="directory of generated matrices")
    p.add_argument("--reference", required=True, help="directory of reference matrices")
    p.add_argument("--groups", action="store_true",
                   help="also run NC/EMCI/LMCI group contrasts")
    p.add_argument("--threshold", type=float, default=0.05, help="significance level")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="render figures from analysis results")
    p.add_argument("--results", required=True, help="directory of analysis outputs")
    p.add_argument("--format", required=True, choices=["chord", "radar"])
    p.add_argument("--out", help="output directory (defaults to --results)")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FormatError, DimensionError, StratificationError, StateError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
