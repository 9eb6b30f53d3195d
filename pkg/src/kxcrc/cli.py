"""Batch front end: ``kxcrc synth|tune|eval|rank``.

Every command reads one JSON run config (``--config``); individual keys can
be overridden with ``--set dotted.key=JSON`` or the dedicated flags.  Keys::

    dataset      {"manifest": path} or {"synth": {SynthConfig fields}}
    synth        SynthConfig fields (synth command)
    normalization  scheme written to a synthesized manifest
    method       MethodSpec fields, kernels as {"kind", "bandwidth"}
    lambda_grid  candidate lambdas (tune)
    lambda_from  a tune result whose chosen lambda and seed eval should use
    split        {"train_count", "train_fraction", "single_shot"}
    trials, base_seed, tuning_seed, exclude_seeds, output_dir

Exit codes: 0 success, 1 usage or config error, 2 numerical failure,
3 I/O failure.
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import data, evaluation, xcrc
from .evaluation import MethodSpec, SplitSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3

DEFAULTS = {
    "method": {"name": "kernel_xcrc", "lam": 2.0},
    "split": {"train_fraction": 0.5},
    "trials": 10,
    "base_seed": 0,
    "output_dir": "out",
    "normalization": "none",
}


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------- config


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _set_key(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted!r}: {k!r} is not an object")
    node[keys[-1]] = value


def _parse_override(item: str):
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw  # bare strings need no quotes


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _merge(cfg, user)
        # relative dataset paths resolve against the config file
        man = cfg.get("dataset", {}).get("manifest")
        if man and not Path(man).is_absolute():
            cfg["dataset"]["manifest"] = str(path.parent / man)
    for item in args.set or []:
        _set_key(cfg, *_parse_override(item))
    flag_keys = {"out": "output_dir", "method": "method.name", "lam": "method.lam",
                 "trials": "trials", "base_seed": "base_seed", "manifest": "dataset.manifest"}
    for attr, key in flag_keys.items():
        v = getattr(args, attr, None)
        if v is not None:
            _set_key(cfg, key, v)
    if getattr(args, "manifest", None):
        cfg["dataset"].pop("synth", None)
    return cfg


def method_from_config(cfg: dict) -> MethodSpec:
    try:
        return MethodSpec.from_dict(cfg["method"])
    except TypeError as exc:
        raise ConfigError(f"bad method config: {exc}") from None


def split_from_config(cfg: dict) -> SplitSpec:
    try:
        return SplitSpec(**cfg.get("split", {}))
    except TypeError as exc:
        raise ConfigError(f"bad split config: {exc}") from None


def dataset_from_config(cfg: dict) -> data.CrossViewDataset:
    src = cfg.get("dataset")
    if not src:
        raise ConfigError("config has no dataset (use {'manifest': path} or {'synth': {...}})")
    if "manifest" in src:
        return data.load_manifest(src["manifest"])
    if "synth" in src:
        return data.synth_generate(_synth_config(src["synth"]))
    raise ConfigError("dataset must contain 'manifest' or 'synth'")


def _synth_config(d) -> data.SynthConfig:
    try:
        return data.SynthConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad synth config: {exc}") from None


def thread_count(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("XCRC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"XCRC_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _out_dir(cfg) -> Path:
    d = Path(cfg["output_dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


# ----------------------------------------------------------------- commands


def cmd_synth(args, cfg) -> int:
    sc = _synth_config(cfg.get("synth", {}))
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    ds = data.synth_generate(sc)
    path = data.write_dataset(ds, cfg["output_dir"], normalization=cfg["normalization"],
                              single_shot=True, extra={"synth": asdict(sc)})
    print(f"wrote {path} ({len(ds.view_a)} probes, {len(ds.view_b)} gallery, "
          f"{len(ds.distractor_ids)} distractors)")
    return EXIT_OK


def cmd_tune(args, cfg) -> int:
    grid = cfg.get("lambda_grid")
    if not grid:
        raise ConfigError("tune needs a non-empty 'lambda_grid'")
    seed = cfg.get("tuning_seed", cfg["base_seed"])
    spec = replace(split_from_config(cfg), seed=seed)
    res = evaluation.lambda_tune(dataset_from_config(cfg), spec, method_from_config(cfg), grid)
    out = Path(args.output) if args.output else _out_dir(cfg) / "tune.json"
    _write_json(out, res.to_dict())
    for lam, s in zip(res.grid, res.rank1):
        print(f"lambda={lam:<10g} rank1={s:.4f}")
    print(f"chosen lambda {res.best_lambda:g} (tuning seed {seed}) -> {out}")
    return EXIT_OK


def _resolve_lambda(cfg, method):
    """Apply ``lambda_from`` and return (method, seeds to exclude)."""
    exclude = list(cfg.get("exclude_seeds", []))
    src = cfg.get("lambda_from")
    if src:
        tuned = json.loads(Path(src).read_text(encoding="utf-8"))
        method = replace(method, lam=float(tuned["chosen_lambda"]))
        exclude.append(int(tuned["tuning_seed"]))
    elif "tuning_seed" in cfg:
        exclude.append(int(cfg["tuning_seed"]))
    return method, exclude


def cmd_eval(args, cfg) -> int:
    t0 = time.perf_counter()
    method, exclude = _resolve_lambda(cfg, method_from_config(cfg))
    spec = split_from_config(cfg)
    threads = thread_count(args.threads)
    ds = dataset_from_config(cfg)
    res = evaluation.run_trials(ds, spec, method, n_trials=int(cfg["trials"]),
                                base_seed=int(cfg["base_seed"]), exclude_seeds=exclude,
                                threads=threads, naive=args.naive)
    out = _out_dir(cfg)
    res.mean.to_csv(out / "cmc.csv")
    per_trial = [{"trial": t, "seed": s, "rates": c.rates.tolist(), "time_sec": dt}
                 for t, (s, c, dt) in enumerate(zip(res.seeds, res.curves, res.timings))]
    _write_json(out / "trials.json", per_trial)
    manifest = res.manifest(method, spec, int(cfg["base_seed"]))
    manifest.update({"excluded_seeds": exclude, "threads": threads, "naive": args.naive,
                     "dataset": cfg.get("dataset"), "wall_clock_sec": time.perf_counter() - t0})
    _write_json(out / "run_manifest.json", manifest)
    ranks = [k for k in (1, 5, 10, 20) if k <= len(res.mean.rates)]
    print("  ".join(f"rank-{k} {100 * res.mean.rate(k):.1f}%" for k in ranks)
          + f"  ({len(res.curves)} trials) -> {out}")
    return EXIT_OK


def cmd_rank(args, cfg) -> int:
    method, _ = _resolve_lambda(cfg, method_from_config(cfg))
    seed = args.seed if args.seed is not None else int(cfg["base_seed"])
    train, test = evaluation.split(dataset_from_config(cfg), replace(split_from_config(cfg), seed=seed))
    probes = test.view_a.ids
    if args.probe is not None:
        if args.probe not in probes:
            raise ConfigError(f"unknown probe id {args.probe!r} (not in the test split for seed {seed})")
        j = probes.index(args.probe)
    else:
        if not 0 <= args.probe_index < len(probes):
            raise ConfigError(f"probe index {args.probe_index} out of range 0..{len(probes) - 1}")
        j = args.probe_index
    scores = evaluation.score_matrix(method, train, test.view_a.features[j:j + 1],
                                     test.view_b.features, naive=args.naive)[0]
    order = xcrc.descending_order(scores[None, :])[0]
    gallery = test.view_b.ids
    # gallery is id-sorted, so the index tie-break is the id tie-break
    for i in order:
        s = scores[i]
        print(f"{gallery[i]}\t{'nan' if np.isnan(s) else f'{s:.6f}'}")
    return EXIT_OK


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="run config JSON")
    common.add_argument("--set", action="append", metavar="KEY=JSON",
                        help="override a config key, e.g. method.lam=1.5 (repeatable)")
    common.add_argument("--out", help="output directory (output_dir)")

    p = _Parser(prog="kxcrc", description="Kernel X-CRC re-identification experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--seed", type=int)

    def run_flags(q, trials=True):
        q.add_argument("--manifest", help="dataset manifest (dataset.manifest)")
        q.add_argument("--method", choices=evaluation.METHODS)
        q.add_argument("--lam", type=float)
        q.add_argument("--base-seed", type=int, dest="base_seed")
        if trials:
            q.add_argument("--trials", type=int)

    t = sub.add_parser("tune", parents=[common], help="choose lambda on one partition")
    run_flags(t, trials=False)
    t.add_argument("--output", "-o", help="result file (default OUT/tune.json)")

    e = sub.add_parser("eval", parents=[common], help="repeated-trial CMC evaluation")
    run_flags(e)
    e.add_argument("--threads", type=int, help="trial workers (default $XCRC_THREADS or all cores)")
    e.add_argument("--naive", action="store_true", help="per-pair coding loop instead of batched")

    r = sub.add_parser("rank", parents=[common], help="print the gallery ranking of one probe")
    run_flags(r, trials=False)
    who = r.add_mutually_exclusive_group(required=True)
    who.add_argument("--probe", help="probe id")
    who.add_argument("--probe-index", type=int, dest="probe_index")
    r.add_argument("--seed", type=int, help="split seed (default base_seed)")
    r.add_argument("--naive", action="store_true")
    return p


COMMANDS = {"synth": cmd_synth, "tune": cmd_tune, "eval": cmd_eval, "rank": cmd_rank}


def _exit_code(exc: BaseException) -> int:
    cause = exc.__cause__ if isinstance(exc, evaluation.TrialError) else exc
    if isinstance(cause, (OSError, data.FeatureFormatError)):
        return EXIT_IO
    if isinstance(cause, (np.linalg.LinAlgError, xcrc.DegenerateCodingError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_CONFIG


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, ValueError, KeyError, TypeError, OSError, RuntimeError,
            np.linalg.LinAlgError, ArithmeticError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing config key {exc}"
        print(f"kxcrc {args.command}: error: {msg}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
