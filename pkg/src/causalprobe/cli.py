"""Command-line front end: generate, train, eval, ablate, inspect.

Exit codes: 0 on success, 2 for invalid configuration or input files, 1 for
failures during computation.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .config import PRESETS, RunConfig, derive_seed, from_dict, resolve, save_run_config
from .datagen.serialization import read_dataset, write_dataset
from .datagen.scm import generate_dataset
from .errors import ConfigError, FormatError
from .evaluation import KINDS, evaluate, run_ablation
from .tensorio import load_tensors
from .training import Trainer, latest_checkpoint, truncate_metrics

log = logging.getLogger("causalprobe")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2
OUTPUT_ROOT_ENV = "CAUSALPROBE_OUTPUT_ROOT"
GENERATE_NAMESPACE = 0x6765
LOCK_NAME = ".lock"


class RunLockedError(RuntimeError):
    pass


@contextlib.contextmanager
def run_lock(run_dir: Path):
    """Exclusive lock file so two invocations never share a run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        holder = path.read_text().strip() or "?"
        if holder.isdigit() and not _pid_alive(int(holder)):
            path.unlink()  # stale lock from a dead process
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        else:
            raise RunLockedError(f"{run_dir} is in use by process {holder} (lock file {path})") from None
    with os.fdopen(fd, "w") as fh:
        fh.write(str(os.getpid()))
    try:
        yield
    finally:
        path.unlink(missing_ok=True)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def parse_set(items) -> dict:
    """``key=value`` pairs; values are parsed as JSON when possible, else kept as strings."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_args(args) -> RunConfig:
    overrides = parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    return resolve(args.preset, args.config, overrides)


def run_dir_for(config: RunConfig) -> Path:
    path = Path(config.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    config = resolve_args(args)
    if args.count < 1:
        raise ConfigError(f"--count must be >= 1, got {args.count}")
    t = config.train
    n_obs = t.mixed_obs if args.n_obs is None else args.n_obs
    n_int = t.mixed_int if args.n_int is None else args.n_int
    out = run_dir_for(config)
    with run_lock(out):
        data_dir = out / "datasets"
        data_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(config, out / "config.json")
        entries = []
        for i in range(args.count):
            seed = derive_seed(GENERATE_NAMESPACE, config.seed, i)
            f = args.f if args.f is not None else int(np.random.default_rng(seed).integers(t.f_min, t.f_max + 1))
            ds, dag, _ = generate_dataset(seed, f, n_obs, n_int, config.datagen)
            path = data_dir / f"dataset_{i:05d}.scmd"
            write_dataset(path, ds, dag)
            entries.append({
                "file": str(path.relative_to(out)), "seed": seed, "f": f, "family": ds.family,
                "mechanism": ds.mechanism, "noise": ds.noise, "n_edges": dag.n_edges,
                "edge_density": dag.n_edges / (f * (f - 1) / 2),
                "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            })
        densities = [e["edge_density"] for e in entries]
        manifest = {
            "config_hash": config.provenance_hash(),
            "count": len(entries),
            "summary": {
                "families": dict(Counter(e["family"] for e in entries)),
                "mechanisms": dict(Counter(e["mechanism"] for e in entries)),
                "noises": dict(Counter(e["noise"] for e in entries)),
                "mean_edge_density": float(np.mean(densities)),
                "mean_edges": float(np.mean([e["n_edges"] for e in entries])),
            },
            "entries": entries,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(entries)} datasets and manifest.json to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_args(args)
    run_dir = run_dir_for(config)
    with run_lock(run_dir):
        ckpt = latest_checkpoint(run_dir)
        if ckpt is not None and not args.resume:
            raise ConfigError(f"{run_dir} already holds checkpoints; pass --resume or choose another --out")
        if args.resume and ckpt is not None:
            trainer = Trainer.from_checkpoint(ckpt, run_dir)
            if trainer.config.provenance_hash() != config.provenance_hash():
                raise ConfigError(f"resolved config differs from the one stored in {ckpt}; "
                                  "resume with the original settings")
            if trainer.finished:
                print(f"run in {run_dir} already finished at step {trainer.step}; nothing to do")
                return EXIT_OK
            truncate_metrics(run_dir, trainer.step)
            print(f"resuming from {ckpt} at step {trainer.step}")
        else:
            trainer = Trainer(config, run_dir)
        trainer.run()
    last = trainer.history[-1] if trainer.history else None
    if last is not None:
        print(f"finished step {trainer.step}: bce {last.bce:.4f} h {last.h:.4f}  ({run_dir})")
    return EXIT_OK


def _checkpoint_from(path: Path) -> Path:
    if path.is_dir():
        found = latest_checkpoint(path)
        if found is None:
            raise ConfigError(f"no checkpoints under {path}")
        return found
    if not path.is_file():
        raise ConfigError(f"checkpoint {path} does not exist")
    return path


def cmd_eval(args) -> int:
    ckpt = _checkpoint_from(Path(args.checkpoint))
    trainer = Trainer.from_checkpoint(ckpt)
    overrides = parse_set(args.set)
    if args.seed is not None:
        overrides["eval.seed"] = args.seed
    bad = [k for k in overrides if not k.startswith("eval.")]
    if bad:
        raise ConfigError(f"eval only accepts eval.* overrides, got {bad}")
    config = trainer.config.replace(**overrides) if overrides else trainer.config
    if args.out is not None:
        out = Path(args.out)
    else:
        out = ckpt.parent.parent / f"eval_step_{trainer.step}"
    with run_lock(out):
        save_run_config(config, out / "config.json")
        provenance = {"checkpoint": str(ckpt), "step": trainer.step, "config_hash": config.provenance_hash()}
        report = evaluate(trainer.model, config.eval, provenance)
        paths = report.write(out)
    o = report.overall
    print(f"ROC AUC {o['roc_auc']['mean']:.4f}  AP {o['ap']['mean']:.4f}  "
          f"({o['ap']['n']} scored, {len(report.exclusions)} excluded)  -> {paths['json']}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_args(args)
    out = run_dir_for(config)
    with run_lock(out):
        save_run_config(config, out / "config.json")
        result = run_ablation(args.kind, config, layers=args.layers, weight_path=args.weights,
                              worse_weight_path=args.worse_weights, out_dir=out)
        path = result.write(out)
    for row in result.to_dict()["rows"]:
        print(f"{row['name']:>14}  ROC AUC {row['roc_auc']:.4f}  AP {row['ap']:.4f}")
    for s in result.skipped:
        print(s["reason"])
    for flag in result.flags:
        print(f"FLAG: {flag}")
    print(f"report: {path}")
    return EXIT_OK


def describe(path: Path) -> dict:
    """Summary of a dataset file, tensor archive, manifest or run directory."""
    if path.is_dir():
        info = {"run_dir": str(path)}
        if (path / "config.json").exists():
            info["config"] = json.loads((path / "config.json").read_text())
        ckpt = latest_checkpoint(path)
        if ckpt is not None:
            info["latest_checkpoint"] = describe(ckpt)
        return info
    if not path.is_file():
        raise ConfigError(f"{path} does not exist")
    if path.suffix == ".scmd":
        ds, dag = read_dataset(path)
        return {"kind": "dataset", "f": ds.f, "n": ds.n, **ds.meta(), "n_edges": dag.n_edges,
                "adjacency": dag.adj.tolist()}
    if path.suffix == ".tnsr":
        tensors, meta = load_tensors(path)
        meta = dict(meta)
        if "config" in meta:
            meta["config_hash"] = from_dict(meta.pop("config")).provenance_hash()
        meta.pop("dual_history", None)
        meta["tensors"] = {k: list(v.shape) for k, v in sorted(tensors.items())}
        return meta
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if "entries" in data:
            return {k: v for k, v in data.items() if k != "entries"}
        return data
    raise ConfigError(f"don't know how to inspect {path} (expected .scmd, .tnsr, .json or a run directory)")


def cmd_inspect(args) -> int:
    print(json.dumps(describe(Path(args.path)), indent=2, default=str))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file merged over the preset")
    common.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    common.add_argument("--seed", type=int, help="run seed (eval: held-out suite seed)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. --set train.steps=500 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="causalprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write synthetic datasets and a manifest")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--f", type=int, help="feature count (default: uniform over train.f_min..f_max)")
    p.add_argument("--n-obs", type=int)
    p.add_argument("--n-int", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", parents=[common], help="train the causal tokens, decoder and head")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the held-out suite")
    p.add_argument("checkpoint", help="checkpoint file or run directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--layers", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--weights", metavar="PATH", help="encoder weight file for the loaded variant")
    p.add_argument("--worse-weights", metavar="PATH", help="optional weight file for a worse-weights variant")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="pretty-print a dataset, checkpoint, manifest or run directory")
    p.add_argument("path")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
