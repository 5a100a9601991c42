"""Command-line workflow: simulate, train, score, evaluate, classify,
ingest-pamap2, plot.

Every subcommand accepts ``--config FILE`` holding ``key=value`` lines
(keys are flag names without the leading dashes; ``#`` starts a comment);
explicit flags override config values. When neither supplies a seed the
``CORDCPD_SEED`` environment variable is used, then 0. Machine-readable
outputs are CSV; every error path exits nonzero naming the failing file or
flag.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import FormatError, load_manifest, load_split
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .metrics import EvalConfig, dataset_detection_metrics
from .pamap2 import ingest_pamap2
from .plotting import write_score_plot
from .scoring import classify_change_type, read_scores_csv, score_dataset, write_scores_csv
from .simulator import CHANGE_TYPES, SimConfig, generate_dataset
from .training import Checkpoint, TrainConfig, fit

SCORE_KINDS = ("s_r", "s_d", "s_en")


# ---------------------------------------------------------------------------
# config file and value resolution

def parse_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: config file not found")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _int_pair(text: str) -> tuple[int, int]:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {text!r}")
    return int(parts[0]), int(parts[1])


def parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


class Resolver:
    """Flag value if given, else config-file value, else default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = parse_config_file(args.config) if args.config else {}

    def get(self, key: str, cast, default=None):
        value = getattr(self.args, key, None)
        if value is not None:
            return value
        if key in self.config:
            raw = self.config[key]
            try:
                return cast(raw)
            except (TypeError, ValueError) as exc:
                raise FormatError(f"config key {key}: bad value {raw!r} ({exc})") from exc
        return default

    def seed(self) -> int:
        value = self.get("seed", int)
        if value is not None:
            return int(value)
        env = os.environ.get("CORDCPD_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError as exc:
                raise FormatError(f"CORDCPD_SEED={env!r} is not an integer") from exc
        return 0


# ---------------------------------------------------------------------------
# simulate

SIM_FIELDS = (
    ("n_particles", int),
    ("t_steps", int),
    ("box_half_width", float),
    ("spring_constant", float),
    ("fine_dt", float),
    ("sample_every", int),
    ("connection_prob", float),
    ("change_window", _int_pair),
    ("loc_noise_sigma", float),
    ("speed_noise_sigma", float),
    ("min_connection_flips", int),
    ("init_pos_sigma", float),
    ("init_speed", float),
)


def parse_counts(text: str, change_type: str) -> dict[str, dict[str, int]]:
    """``--counts`` grammar: up to three ``/``-separated parts for
    train/val/test; each part is either a ``location,speed,connection``
    triple or a single integer applied to every selected change type."""
    parts = text.split("/")
    if len(parts) > 3:
        raise FormatError(f"--counts {text!r}: more than three split sections")
    selected = CHANGE_TYPES if change_type == "all" else (change_type,)
    counts: dict[str, dict[str, int]] = {}
    for split, part in zip(dataio.SPLITS, parts):
        part = part.strip()
        try:
            numbers = [int(v) for v in part.split(",")]
        except ValueError as exc:
            raise FormatError(f"--counts {text!r}: {exc}") from exc
        if len(numbers) == 1:
            per_type = {ct: numbers[0] for ct in selected}
        elif len(numbers) == len(CHANGE_TYPES):
            per_type = {ct: n for ct, n in zip(CHANGE_TYPES, numbers) if ct in selected}
        else:
            raise FormatError(
                f"--counts {text!r}: each section needs 1 or {len(CHANGE_TYPES)} integers")
        counts[split] = {ct: n for ct, n in per_type.items() if n > 0}
    if not any(counts.values()):
        raise FormatError(f"--counts {text!r}: requests zero series")
    return counts


def cmd_simulate(args: argparse.Namespace) -> int:
    res = Resolver(args)
    change_type = res.get("change_type", str, "all")
    if change_type not in CHANGE_TYPES + ("all",):
        raise FormatError(f"--change-type {change_type!r}: unknown change type")
    counts_text = res.get("counts", str)
    if counts_text is None:
        raise FormatError("--counts is required (e.g. 150,150,150/10,10,10/50,50,50)")
    out_dir = res.get("out", str)
    if out_dir is None:
        raise FormatError("--out directory is required")
    counts = parse_counts(counts_text, change_type)
    fields = {}
    for name, cast in SIM_FIELDS:
        value = res.get(name, cast)
        if isinstance(value, str):
            # pair-valued flags arrive unparsed (argparse stores the string)
            try:
                value = cast(value)
            except ValueError as exc:
                raise FormatError(f"--{name.replace('_', '-')} {value!r}: {exc}") from exc
        if value is not None:
            fields[name] = value
    try:
        cfg = SimConfig(**fields)
    except ValueError as exc:
        raise FormatError(f"bad simulator settings: {exc}") from exc
    manifest = generate_dataset(counts, res.seed(), cfg, out_dir)
    total = len(manifest.series)
    by_split = {s: len(manifest.split_records(s)) for s in dataio.SPLITS}
    print(f"wrote {total} series to {dataio.manifest_path(out_dir)} "
          f"(train {by_split['train']}, val {by_split['val']}, test {by_split['test']})")
    return 0


# ---------------------------------------------------------------------------
# train

def parse_encoder_kinds(text: str) -> tuple[str, str]:
    if ":" not in text:
        raise FormatError(
            f"--encoder {text!r}: expected temporal:spatial, e.g. rnn:gnn")
    temporal, spatial = text.split(":", 1)
    return temporal.strip(), spatial.strip()


def cmd_train(args: argparse.Namespace) -> int:
    res = Resolver(args)
    data_dir = res.get("data", str)
    out_path = res.get("out", str)
    if data_dir is None or out_path is None:
        raise FormatError("--data and --out are required")
    temporal, spatial = parse_encoder_kinds(res.get("encoder", str, "rnn:gnn"))
    hidden = res.get("hidden_dim", int, 256)
    try:
        encoder = EncoderConfig(temporal_kind=temporal, spatial_kind=spatial,
                                hidden_dim=hidden)
        decoder = DecoderConfig(out_kind=res.get("decoder_out", str, "rnn"),
                                hidden_dim=hidden)
    except ValueError as exc:
        raise FormatError(f"bad model settings: {exc}") from exc
    cfg = TrainConfig(
        encoder=encoder,
        decoder=decoder,
        lr=res.get("lr", float, 0.001),
        batch_size=res.get("batch_size", int),
        epochs=res.get("epochs", int, 50),
        lambda_smooth=res.get("lambda", float),
        seed=res.seed(),
        patience=res.get("patience", int, 10),
        straight_through=res.get("straight_through", parse_bool, False),
        encoder_frozen_epochs=res.get("encoder_frozen_epochs", int, 0),
    )
    manifest = load_manifest(data_dir)
    train = load_split(manifest, "train")
    val = load_split(manifest, "val")
    if len(train) == 0:
        raise FormatError(f"{data_dir}: training split is empty")

    def log(record: dict) -> None:
        print(f"epoch {record['epoch']:3d}  train {record['train_loss']:.6f}  "
              f"val {record['val_loss']:.6f}  best {record['best_epoch']}  "
              f"{record['seconds']:.1f}s", flush=True)

    checkpoint = fit(train.values, val.values, cfg, log=log)
    checkpoint.save(out_path)
    print(f"saved checkpoint {out_path} (epoch {checkpoint.epoch}, "
          f"val loss {checkpoint.val_loss:.6f})")
    return 0


# ---------------------------------------------------------------------------
# score

def cmd_score(args: argparse.Namespace) -> int:
    res = Resolver(args)
    checkpoint_path = res.get("checkpoint", str)
    data_dir = res.get("data", str)
    out_path = res.get("out", str)
    if checkpoint_path is None or data_dir is None or out_path is None:
        raise FormatError("--checkpoint, --data and --out are required")
    split = res.get("split", str, "test")
    window_k = res.get("window_k", int, 5)
    checkpoint = Checkpoint.load(checkpoint_path)
    model = checkpoint.build_model()
    manifest = load_manifest(data_dir)
    if (manifest.n_vars, manifest.n_feats) != (model.n_vars, model.n_feats):
        raise FormatError(
            f"{checkpoint_path}: model expects {model.n_vars} vars x "
            f"{model.n_feats} features, dataset has {manifest.n_vars} x "
            f"{manifest.n_feats}")
    loaded = load_split(manifest, split)
    if len(loaded) == 0:
        raise FormatError(f"{data_dir}: split {split!r} is empty")
    triples = score_dataset(model, loaded.values, k=window_k,
                            batch_size=res.get("batch_size", int, 50))
    write_scores_csv(out_path, loaded.ids, triples)
    print(f"scored {len(loaded)} series ({split}) -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _load_scored_series(res: Resolver) -> tuple[list[str], list, "np.ndarray", list[str]]:
    scores_path = res.get("scores", str)
    data_dir = res.get("data", str)
    if scores_path is None:
        raise FormatError("--scores is required")
    if not Path(scores_path).exists():
        raise FormatError(f"{scores_path}: scores file not found")
    ids, by_id = read_scores_csv(scores_path)
    labels = np.zeros(len(ids), dtype=np.int64)
    types = ["unknown"] * len(ids)
    if data_dir is not None:
        manifest = load_manifest(data_dir)
        for i, sid in enumerate(ids):
            try:
                record = manifest.find(sid)
            except KeyError as exc:
                raise FormatError(f"{scores_path}: series {sid!r} not in "
                                  f"{data_dir} manifest") from exc
            labels[i] = record.change_step
            types[i] = record.change_type
    return ids, [by_id[s] for s in ids], labels, types


def cmd_evaluate(args: argparse.Namespace) -> int:
    res = Resolver(args)
    if res.get("data", str) is None:
        raise FormatError("--data is required to look up change-step labels")
    out_path = res.get("out", str)
    if out_path is None:
        raise FormatError("--out report path is required")
    ids, triples, labels, types = _load_scored_series(res)
    eval_cfg = EvalConfig(tri_margin=res.get("tri_margin", int, 15),
                          auc_tolerance=res.get("auc_tolerance", int, 0))
    lines = ["score,subset,count,auc,tri"]
    subsets = [("all", np.arange(len(ids)))]
    for ct in sorted(set(types)):
        mask = np.array([t == ct for t in types])
        if mask.any() and len(set(types)) > 1:
            subsets.append((ct, np.flatnonzero(mask)))
    for name, index in subsets:
        picked = [triples[i] for i in index]
        report = dataset_detection_metrics(picked, labels[index], eval_cfg)
        for kind in SCORE_KINDS:
            lines.append(",".join([
                kind, name, str(len(index)),
                repr(float(report[kind]["auc"])),
                repr(float(report[kind]["tri"])),
            ]))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")
    overall = dataset_detection_metrics(triples, labels, eval_cfg)
    summary = "  ".join(
        f"{kind} auc {overall[kind]['auc']:.4f} tri {overall[kind]['tri']:.4f}"
        for kind in SCORE_KINDS)
    print(f"evaluated {len(ids)} series -> {out_path}\n{summary}")
    return 0


# ---------------------------------------------------------------------------
# classify

def cmd_classify(args: argparse.Namespace) -> int:
    res = Resolver(args)
    with_label = bool(args.with_label)
    if with_label and res.get("data", str) is None:
        raise FormatError("--with-label requires --data for change-step labels")
    ids, triples, labels, types = _load_scored_series(res)
    alpha = res.get("alpha", float, 0.75)
    tau = res.get("tau", float, 0.0)
    lines = ["series_id,step,discriminant,label" +
             (",true_type" if res.get("data", str) else "")]
    for i, (sid, triple) in enumerate(zip(ids, triples)):
        step = int(labels[i]) if with_label else None
        decision = classify_change_type(triple.correlation, triple.independent,
                                        step=step, alpha=alpha, tau=tau)
        row = [sid, str(decision.predicted_step),
               repr(float(decision.discriminant)), decision.label]
        if res.get("data", str):
            row.append(types[i])
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    out_path = res.get("out", str)
    if out_path is None:
        sys.stdout.write(text)
    else:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
        mode = "label steps" if with_label else "predicted steps"
        print(f"classified {len(ids)} series at {mode} -> {out_path}")
    return 0


# ---------------------------------------------------------------------------
# ingest-pamap2 and plot

def cmd_ingest_pamap2(args: argparse.Namespace) -> int:
    res = Resolver(args)
    raw_dir = res.get("raw", str)
    out_dir = res.get("out", str)
    if raw_dir is None or out_dir is None:
        raise FormatError("--raw and --out are required")
    manifest = ingest_pamap2(raw_dir, out_dir)
    by_split = {s: len(manifest.split_records(s)) for s in dataio.SPLITS}
    print(f"ingested {len(manifest.series)} windows -> "
          f"{dataio.manifest_path(out_dir)} (train {by_split['train']}, "
          f"val {by_split['val']}, test {by_split['test']})")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    res = Resolver(args)
    scores_path = res.get("scores", str)
    series_id = res.get("series_id", str)
    out_path = res.get("out", str)
    if scores_path is None or series_id is None or out_path is None:
        raise FormatError("--scores, --series-id and --out are required")
    if not Path(scores_path).exists():
        raise FormatError(f"{scores_path}: scores file not found")
    ids, by_id = read_scores_csv(scores_path)
    if series_id not in by_id:
        raise FormatError(f"{scores_path}: series {series_id!r} not in scores file")
    label = res.get("label", int)
    data_dir = res.get("data", str)
    if label is None and data_dir is not None:
        manifest = load_manifest(data_dir)
        try:
            label = manifest.find(series_id).change_step
        except KeyError as exc:
            raise FormatError(f"series {series_id!r} not in {data_dir} manifest") from exc
    svg_path, csv_path = write_score_plot(out_path, by_id[series_id],
                                          label_step=label, title=series_id)
    print(f"wrote {svg_path} and {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value settings file; flags override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cordcpd",
        description="Correlation-aware change point detection workflow")
    subs = parser.add_subparsers(dest="command", required=True)

    sim = subs.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("--counts",
                     help="series per change type: location,speed,connection "
                          "triples (or one integer) for train[/val[/test]]")
    sim.add_argument("--change-type", dest="change_type",
                     choices=CHANGE_TYPES + ("all",),
                     help="restrict generation to one change type")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="output dataset directory")
    for name, cast in SIM_FIELDS:
        flag = "--" + name.replace("_", "-")
        sim.add_argument(flag, dest=name,
                         type=str if cast is _int_pair else cast,
                         help=f"simulator setting {name}")
    _add_common(sim)
    sim.set_defaults(func=cmd_simulate)

    tr = subs.add_parser("train", help="fit a model on a dataset")
    tr.add_argument("--data", help="dataset directory with manifest.json")
    tr.add_argument("--encoder", help="temporal:spatial kinds, e.g. rnn:gnn")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--lambda", dest="lambda", type=float,
                    help="smoothness penalty weight")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out", help="checkpoint output path")
    tr.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--patience", type=int)
    tr.add_argument("--decoder-out", dest="decoder_out", choices=("rnn", "mlp"))
    tr.add_argument("--straight-through", dest="straight_through",
                    action="store_const", const=True,
                    help="train the decoder on discretized (0/1) edge samples")
    tr.add_argument("--encoder-frozen-epochs", dest="encoder_frozen_epochs",
                    type=int,
                    help="hold the encoder at initialization for the first "
                         "K epochs so the decoder trains first")
    _add_common(tr)
    tr.set_defaults(func=cmd_train)

    sc = subs.add_parser("score", help="score a dataset split with a checkpoint")
    sc.add_argument("--checkpoint")
    sc.add_argument("--data")
    sc.add_argument("--split", choices=dataio.SPLITS)
    sc.add_argument("--window-k", dest="window_k", type=int,
                    help="rollout window length for the dynamics score")
    sc.add_argument("--batch-size", dest="batch_size", type=int)
    sc.add_argument("--out", help="scores CSV output path")
    _add_common(sc)
    sc.set_defaults(func=cmd_score)

    ev = subs.add_parser("evaluate", help="detection metrics from a scores file")
    ev.add_argument("--scores")
    ev.add_argument("--data")
    ev.add_argument("--tri-margin", dest="tri_margin", type=int)
    ev.add_argument("--auc-tolerance", dest="auc_tolerance", type=int)
    ev.add_argument("--out", help="report CSV output path")
    _add_common(ev)
    ev.set_defaults(func=cmd_evaluate)

    cl = subs.add_parser("classify", help="label change type per series")
    cl.add_argument("--scores")
    cl.add_argument("--data")
    cl.add_argument("--alpha", type=float)
    cl.add_argument("--tau", type=float)
    mode = cl.add_mutually_exclusive_group()
    mode.add_argument("--with-label", dest="with_label", action="store_true",
                      help="classify at the labeled change step")
    mode.add_argument("--without-label", dest="with_label", action="store_false",
                      help="classify at the predicted change step (default)")
    cl.set_defaults(with_label=False)
    cl.add_argument("--out", help="CSV output path (default: stdout)")
    _add_common(cl)
    cl.set_defaults(func=cmd_classify)

    ing = subs.add_parser("ingest-pamap2", help="window a raw PAMAP2 directory")
    ing.add_argument("--raw", help="directory of raw subject .dat files")
    ing.add_argument("--out", help="output dataset directory")
    _add_common(ing)
    ing.set_defaults(func=cmd_ingest_pamap2)

    pl = subs.add_parser("plot", help="SVG score traces for one series")
    pl.add_argument("--scores")
    pl.add_argument("--series-id", dest="series_id")
    pl.add_argument("--data", help="dataset directory, for the label marker")
    pl.add_argument("--label", type=int, help="explicit change-step marker")
    pl.add_argument("--out", help="output .svg path (companion .csv alongside)")
    _add_common(pl)
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
