"""Command-line entry point: ``sparsemos {synth,train,infer,eval,bench,replay}``.

Every command resolves its configuration (flags > config file > defaults)
into one JSON-serializable dict, writes a run manifest holding that dict
into its output directory, then executes from the dict alone. ``replay``
re-executes a manifest, optionally into another output directory.

Exit codes: 0 success, 2 bad arguments or configuration, 3 malformed or
incompatible input files, 4 I/O failure, 5 broken inference contract.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from sparsemos import __version__
from sparsemos.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from sparsemos.data import kitti
from sparsemos.data.synthetic import SyntheticSceneConfig, generate_synthetic, write_sequence
from sparsemos.evaluation import ConfusionCounts, accumulate, format_report, write_report
from sparsemos.fusion import ContractError, FusionConfig, HorizonQueue, LogOddsBuffer, _Entry, receding_step, run_stream
from sparsemos.geometry import IGNORE, align_sequence, relative_from_absolute
from sparsemos.network import CoordinateManager, NetworkConfig, desk_config, forward_graph, init_params, tiny_config
from sparsemos.pipeline import make_infer
from sparsemos.sparse.serialize import WeightFormatError
from sparsemos.training import AdamState, EpochRecord, Sequence4D, TrainConfig, train
from sparsemos.voxelizer import DataError, quantize

log = logging.getLogger("sparsemos")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_IO = 4
EXIT_CONTRACT = 5

PRESETS: dict[str, Callable[[], NetworkConfig]] = {"tiny": tiny_config, "desk": desk_config}
SPLITS = ("train", "val", "test")


class UsageError(ValueError):
    """Invalid arguments or configuration."""


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = __version__
    seeds: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "tool_version": self.tool_version,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "timings": self.timings,
        }

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        try:
            d = json.loads(Path(path).read_text())
            return cls(d["command"], d["config"], d.get("tool_version", "?"), d.get("seeds", {}),
                       d.get("inputs", []), d.get("outputs", []), d.get("timings", {}))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise kitti.FormatError(f"{path}: not a run manifest ({exc})") from exc


def _read_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return d


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _flags(pairs: dict[str, Any]) -> dict:
    """Nested override dict from ``{"a.b": value}``; ``None`` values are dropped."""
    out: dict = {}
    for key, value in pairs.items():
        if value is None:
            continue
        node = out
        *head, last = key.split(".")
        for h in head:
            node = node.setdefault(h, {})
        node[last] = value
    return out


def _mkdir(path: str | Path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _relpaths(root: Path, paths: Sequence[Path]) -> list[str]:
    return sorted(str(p.relative_to(root)) for p in paths)


# --- synth ---------------------------------------------------------------

def resolve_synth(args: argparse.Namespace) -> dict:
    defaults = {"scene": SyntheticSceneConfig().to_dict(), "splits": {"train": 20, "val": 5, "test": 5}, "seed": 0}
    flags = _flags({"seed": args.seed, "splits.train": args.train, "splits.val": args.val, "splits.test": args.test,
                    "scene.scans_per_sequence": args.scans})
    cfg = _merge(_merge(defaults, _read_config(args.config)), flags)
    cfg["out"] = args.out
    return cfg


def sequence_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def run_synth(cfg: dict, manifest: RunManifest) -> None:
    counts = {s: int(cfg["splits"].get(s, 0)) for s in SPLITS}
    if any(c < 0 for c in counts.values()) or sum(counts.values()) == 0:
        raise UsageError(f"synthetic config must request at least one sequence, got {counts}")
    try:
        base = SyntheticSceneConfig.from_dict(cfg["scene"])
    except TypeError as exc:
        raise UsageError(f"bad scene configuration: {exc}") from exc
    out = _mkdir(cfg["out"])
    splits: dict[str, list[str]] = {}
    written: list[Path] = []
    seeds = {}
    index = 0
    for split in SPLITS:
        names = []
        for _ in range(counts[split]):
            name = f"{index:02d}"
            seed = sequence_seed(int(cfg["seed"]), index)
            scene = SyntheticSceneConfig.from_dict({**base.to_dict(), "seed": seed})
            seq_dir = out / "sequences" / name
            write_sequence(generate_synthetic(scene), seq_dir)
            written.append(seq_dir)
            seeds[name] = seed
            names.append(name)
            index += 1
        splits[split] = names
    (out / "splits.json").write_text(json.dumps(splits, indent=2, sort_keys=True) + "\n")
    manifest.seeds = {"base": int(cfg["seed"]), "sequences": seeds}
    manifest.outputs = _relpaths(out, written + [out / "splits.json"])
    log.info("wrote %d sequences to %s", index, out)


# --- train ---------------------------------------------------------------

def resolve_train(args: argparse.Namespace) -> dict:
    file_cfg = _read_config(args.config)
    preset = args.preset or file_cfg.get("preset", "tiny")
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    defaults = {"preset": preset, "network": PRESETS[preset]().to_dict(), "train": TrainConfig().to_dict()}
    flags = _flags({
        "train.max_epochs": args.epochs,
        "train.learning_rate": args.lr,
        "train.samples_per_epoch": args.samples_per_epoch,
        "train.seed": args.seed,
        "train.window_size": args.window,
        "train.temporal_stride": args.stride,
        "train.use_poses": False if args.no_poses else None,
    })
    cfg = _merge(_merge(defaults, file_cfg), flags)
    if args.no_augment:
        cfg["train"]["augment"] = {k: False for k in ("rotation", "shift", "flip", "jitter", "scale")}
    cfg.update(data=args.data, out=args.out, resume=bool(args.resume))
    return cfg


def _read_splits(data: Path) -> dict[str, list[str]]:
    path = data / "splits.json"
    if not path.exists():
        raise UsageError(f"{path} is missing; the data directory needs train/val/test splits")
    try:
        splits = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise kitti.FormatError(f"{path}: {exc}") from exc
    return splits


def load_sequence(seq_dir: Path, remap: Optional[kitti.LabelRemap] = None) -> Sequence4D:
    sd = kitti.SequenceDir(seq_dir, remap)
    scans = [sd.scan(i) for i in range(len(sd))]
    return Sequence4D(sd.name, scans, [sd.pose(i) for i in range(len(sd))])


def _log_row(rec: EpochRecord) -> str:
    return f"{rec.epoch}\t{rec.train_loss:.6f}\t{rec.val_iou:.6f}\t{rec.best_val_iou:.6f}\n"


LOG_HEADER = "epoch\ttrain_loss\tval_iou\tbest_val_iou\n"


def run_train(cfg: dict, manifest: RunManifest) -> None:
    data = Path(cfg["data"])
    splits = _read_splits(data)
    if not splits.get("train"):
        raise UsageError(f"{data}/splits.json lists no training sequences")
    try:
        net = NetworkConfig.from_dict(cfg["network"])
        tcfg = TrainConfig.from_dict(cfg["train"])
    except TypeError as exc:
        raise UsageError(f"bad configuration: {exc}") from exc
    train_seqs = [load_sequence(data / "sequences" / n) for n in splits["train"]]
    val_seqs = [load_sequence(data / "sequences" / n) for n in splits.get("val", [])]
    for s in train_seqs + val_seqs:
        if any(scan.labels is None for scan in s.scans):
            raise kitti.FormatError(f"sequence {s.name} has scans without labels")
    manifest.inputs = [str(data / "sequences" / s.name) for s in train_seqs + val_seqs]
    manifest.seeds = {"network": net.seed, "train": tcfg.seed}

    out = _mkdir(cfg["out"])
    last_path, best_path, log_path = out / "last.smw", out / "best.smw", out / "log.tsv"
    params, opt, start, best = None, None, 0, None
    if cfg.get("resume") and last_path.exists():
        last = load_checkpoint(last_path)
        if last.network != net:
            raise UsageError("resume: network configuration differs from the checkpoint")
        params, opt, start = last.params, last.optimizer, last.epoch + 1
        if best_path.exists():
            prev = load_checkpoint(best_path)
            best = (prev.val_iou, prev.params)
        log.info("resuming after epoch %d", last.epoch)
    else:
        log_path.write_text(LOG_HEADER)
    if start >= tcfg.max_epochs:
        log.info("nothing to do: %d epochs already trained", start)
        return

    best_iou = best[0] if best is not None else -1.0

    def on_epoch(rec: EpochRecord, p, state: AdamState) -> None:
        nonlocal best_iou
        with open(log_path, "a") as f:
            f.write(_log_row(rec))
        save_checkpoint(last_path, Checkpoint(p, net, tcfg, rec.epoch, rec.val_iou, state))
        # without validation data the latest epoch counts as best
        if not val_seqs or rec.val_iou > best_iou:
            best_iou = rec.val_iou
            save_checkpoint(best_path, Checkpoint(p, net, tcfg, rec.epoch, rec.val_iou))
        manifest.timings[f"epoch_{rec.epoch}"] = round(rec.seconds, 3)

    train(train_seqs, net, tcfg, val_seqs or None, params=params, opt_state=opt, start_epoch=start,
          on_epoch=on_epoch, best=best)
    manifest.outputs = _relpaths(out, [best_path, last_path, log_path])


# --- infer ---------------------------------------------------------------

def resolve_infer(args: argparse.Namespace) -> dict:
    defaults = {"fusion": {k: v for k, v in FusionConfig().to_dict().items() if k != "prior"},
                "priors": [0.25], "split": "test", "sequences": None, "export_points": False}
    flags = _flags({
        "fusion.window_size": args.window,
        "fusion.temporal_stride": args.stride,
        "fusion.strategy": args.strategy,
        "fusion.use_poses": False if args.no_poses else None,
        "priors": args.prior,
        "split": args.split,
        "sequences": args.sequences,
        "export_points": True if args.export_points else None,
    })
    cfg = _merge(_merge(defaults, _read_config(args.config)), flags)
    cfg.update(data=args.data, checkpoint=args.checkpoint, out=args.out)
    return cfg


class _CachedInfer:
    """Memoizes window predictions so a prior sweep runs the network once per window."""

    def __init__(self, infer):
        self.infer = infer
        self.key: tuple = ()
        self._cache: dict[tuple, list[np.ndarray]] = {}

    def __call__(self, window):
        key = self.key + tuple(s.seq_index for s in window)
        if key not in self._cache:
            self._cache[key] = [np.array(c, copy=True) for c in self.infer(window)]
        return self._cache[key]


def _sequence_names(cfg: dict, data: Path) -> list[str]:
    if cfg.get("sequences"):
        return list(cfg["sequences"])
    split = cfg.get("split")
    if split in (None, "all"):
        return sorted(p.name for p in (data / "sequences").iterdir() if p.is_dir())
    splits = _read_splits(data)
    if split not in splits:
        raise UsageError(f"split {split!r} not found in {data}/splits.json")
    return list(splits[split])


def prior_dir(out: Path, prior: float, sweep: bool) -> Path:
    return out / f"prior_{prior:g}" if sweep else out


def run_infer(cfg: dict, manifest: RunManifest) -> None:
    data = Path(cfg["data"])
    ckpt = load_checkpoint(cfg["checkpoint"])
    if ckpt.network.in_channels != 1:
        raise WeightFormatError(f"{cfg['checkpoint']}: expects {ckpt.network.in_channels} input channels, data has 1")
    priors = [float(p) for p in cfg["priors"]]
    fusions = [FusionConfig(prior=p, **cfg["fusion"]) for p in priors]
    voxel = TrainConfig.from_dict({**ckpt.train.to_dict(), "temporal_stride": fusions[0].temporal_stride}).voxel
    infer = _CachedInfer(make_infer(ckpt.params, ckpt.network, voxel))
    out = _mkdir(cfg["out"])
    remap = kitti.LabelRemap.default_config()
    sweep = len(priors) > 1
    names = _sequence_names(cfg, data)
    written: list[Path] = []
    manifest.inputs = [str(cfg["checkpoint"])] + [str(data / "sequences" / n) for n in names]
    for name in names:
        sd = kitti.SequenceDir(data / "sequences" / name, remap)
        scans = [sd.scan(i, with_labels=False) for i in range(len(sd))]
        poses = [sd.pose(i) for i in range(len(sd))]
        infer.key = (name,)
        t0 = time.perf_counter()
        for fusion in fusions:
            results = run_stream(zip(scans, poses), infer, fusion)
            pred_dir = _mkdir(prior_dir(out, fusion.prior, sweep) / "sequences" / name / "predictions")
            for r in results:
                frame = kitti.frame_name(sd.frames[r.frame])
                path = pred_dir / f"{frame}.label"
                kitti.write_labels(path, r.labels, remap)
                written.append(path)
                if cfg.get("export_points"):
                    pts = np.c_[r.scan.points, r.labels.astype(np.float64)]
                    np.savetxt(pred_dir / f"{frame}.txt", pts, fmt="%.6f %.6f %.6f %d", header="x y z moving")
        manifest.timings[f"sequence_{name}"] = round(time.perf_counter() - t0, 3)
        log.info("sequence %s: %d scans", name, len(scans))
    manifest.outputs = _relpaths(out, written)


# --- eval ----------------------------------------------------------------

def resolve_eval(args: argparse.Namespace) -> dict:
    cfg = _merge({"remap": None, "sequences": None}, _read_config(args.config))
    cfg = _merge(cfg, _flags({"remap": args.remap, "sequences": args.sequences}))
    cfg.update(pred=args.pred, gt=args.gt, out=args.out)
    return cfg


def evaluate_dirs(pred: Path, gt: Path, remap: kitti.LabelRemap, sequences: Optional[Sequence[str]] = None):
    """Compare ``pred/sequences/*/predictions`` against ``gt/sequences/*/labels``."""
    names = list(sequences) if sequences else sorted(p.name for p in (pred / "sequences").iterdir() if p.is_dir())
    if not names:
        raise UsageError(f"no prediction sequences under {pred}/sequences")
    per_seq: dict[str, ConfusionCounts] = {}
    for name in names:
        gt_dir = gt / "sequences" / name / "labels"
        pred_dir = pred / "sequences" / name / "predictions"
        if not gt_dir.is_dir():
            raise FileNotFoundError(f"{gt_dir} does not exist")
        gt_files = sorted(gt_dir.glob("*.label"))
        missing = [f.name for f in gt_files if not (pred_dir / f.name).exists()]
        if missing:
            raise kitti.FormatError(f"sequence {name}: missing prediction for scan(s) {', '.join(missing)}")
        counts = ConfusionCounts()
        for f in gt_files:
            truth = kitti.read_labels(f, remap)
            guess = kitti.read_labels(pred_dir / f.name, remap)
            if guess.shape != truth.shape:
                raise kitti.FormatError(f"{pred_dir / f.name}: {guess.shape[0]} labels, ground truth has {truth.shape[0]}")
            counts = counts + accumulate(guess, truth, truth == IGNORE)
        per_seq[name] = counts
    total = ConfusionCounts()
    for c in per_seq.values():
        total = total + c
    return total, per_seq


def run_eval(cfg: dict, manifest: RunManifest) -> None:
    remap = kitti.LabelRemap.load(cfg["remap"]) if cfg.get("remap") else kitti.LabelRemap.default_config()
    pred, gt = Path(cfg["pred"]), Path(cfg["gt"])
    total, per_seq = evaluate_dirs(pred, gt, remap, cfg.get("sequences"))
    out = _mkdir(cfg["out"])
    report = format_report(total, per_seq)
    (out / "report.txt").write_text(report)
    write_report(out / "metrics.txt", total, per_seq)
    sys.stdout.write(report)
    manifest.inputs = [str(pred), str(gt)]
    manifest.outputs = ["metrics.txt", "report.txt"]


# --- bench ---------------------------------------------------------------

def resolve_bench(args: argparse.Namespace) -> dict:
    defaults = {"sizes": [5, 10], "reps": 10, "preset": "tiny", "seed": 0}
    cfg = _merge(_merge(defaults, _read_config(args.config)),
                 _flags({"sizes": args.sizes, "reps": args.reps, "preset": args.preset, "seed": args.seed}))
    cfg["out"] = args.out
    return cfg


def _time(fn: Callable[[], Any], reps: int) -> list[float]:
    out = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return out


def run_bench(cfg: dict, manifest: RunManifest) -> None:
    reps = int(cfg["reps"])
    if reps < 1:
        raise UsageError("reps must be >= 1")
    if cfg["preset"] not in PRESETS:
        raise UsageError(f"unknown preset {cfg['preset']!r}")
    net = PRESETS[cfg["preset"]]()
    params = init_params(net)
    voxel = TrainConfig().voxel
    infer = make_infer(params, net, voxel)
    rows = []
    for n in cfg["sizes"]:
        n = int(n)
        frames = generate_synthetic(SyntheticSceneConfig(scans_per_sequence=n + 1, seed=int(cfg["seed"])))
        scans = [f.scan for f in frames]
        poses = [f.pose for f in frames]
        window = align_sequence(scans[:n][::-1], relative_from_absolute(poses[:n][::-1]))
        tensor = quantize(window, voxel)
        confs = infer(window)

        def build_maps():
            cm = CoordinateManager(tensor.coords, net)
            for lvl in range(net.levels):
                cm.conv_map(lvl)
                cm.point_map(lvl)
                if lvl > 0:
                    cm.down_map(lvl)
                if lvl < net.levels - 1:
                    cm.up_map(lvl)
            return cm

        cm = build_maps()
        buffers = [LogOddsBuffer.fresh(len(s), 0.25) for s in window]

        def fuse():
            for b, c in zip(buffers, confs):
                b.update(c, 0.25)

        def step():
            # a full receding-horizon step on a primed queue: align, predict, fuse
            q = HorizonQueue(n, 1)
            for i in range(n - 1):
                q.push(_Entry(i, scans[i], poses[i], LogOddsBuffer.fresh(len(scans[i]), 0.25)))
            receding_step(q, scans[n - 1], poses[n - 1], infer, FusionConfig(window_size=n), n - 1)

        stages = {
            "quantize": lambda: quantize(window, voxel),
            "kernel_maps": build_maps,
            "forward": lambda: forward_graph(params, tensor, net, cm=cm),
            "fusion": fuse,
            "receding_step": step,
        }
        for stage, fn in stages.items():
            ts = _time(fn, reps)
            rows.append((n, stage, statistics.median(ts), statistics.pvariance(ts), tensor.num_sites))
    out = _mkdir(cfg["out"])
    lines = ["scans\tstage\tmedian_s\tvariance_s2\tsites"]
    lines += [f"{n}\t{stage}\t{med:.6f}\t{var:.3e}\t{sites}" for n, stage, med, var, sites in rows]
    for n in cfg["sizes"]:
        med = {stage: m for k, stage, m, _, _ in rows if k == int(n)}
        lines.append(f"{n}\tfusion_overhead_fraction\t{med['fusion'] / med['receding_step']:.6f}\t-\t-")
    table = "\n".join(lines) + "\n"
    (out / "bench.tsv").write_text(table)
    sys.stdout.write(table)
    manifest.outputs = ["bench.tsv"]


# --- wiring --------------------------------------------------------------

RUNNERS = {"synth": run_synth, "train": run_train, "infer": run_infer, "eval": run_eval, "bench": run_bench}


def execute(command: str, cfg: dict) -> RunManifest:
    """Run a resolved command configuration and write its manifest."""
    out = _mkdir(cfg["out"])
    manifest = RunManifest(command, cfg)
    manifest.write(out)
    t0 = time.perf_counter()
    RUNNERS[command](cfg, manifest)
    manifest.timings["total"] = round(time.perf_counter() - t0, 3)
    manifest.write(out)
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsemos", description="4D sparse moving object segmentation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate labeled synthetic sequences")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--train", type=int)
    p.add_argument("--val", type=int)
    p.add_argument("--test", type=int)
    p.add_argument("--scans", type=int, help="scans per sequence")

    p = sub.add_parser("train", help="train a network on a dataset with splits.json")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--samples-per-epoch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--no-poses", action="store_true")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("infer", help="streaming prediction with fusion")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int, help="temporal stride as a multiple of the scan period")
    p.add_argument("--prior", type=float, nargs="+", help="one value, or several for a sweep")
    p.add_argument("--strategy", choices=["receding", "non_overlapping"])
    p.add_argument("--no-poses", action="store_true")
    p.add_argument("--split")
    p.add_argument("--sequences", nargs="+")
    p.add_argument("--export-points", action="store_true", help="also write x y z label text files")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--remap")
    p.add_argument("--sequences", nargs="+")

    p = sub.add_parser("bench", help="timing table for the pipeline stages")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--reps", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write to this directory instead of the recorded one")
    return parser


RESOLVERS = {"synth": resolve_synth, "train": resolve_train, "infer": resolve_infer, "eval": resolve_eval,
             "bench": resolve_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            m = RunManifest.load(args.manifest)
            if m.command not in RUNNERS:
                raise UsageError(f"manifest records unknown command {m.command!r}")
            cfg = dict(m.config)
            if args.out:
                cfg["out"] = args.out
            execute(m.command, cfg)
        else:
            execute(args.command, RESOLVERS[args.command](args))
    except (kitti.FormatError, WeightFormatError, DataError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ContractError as exc:
        print(f"contract error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
