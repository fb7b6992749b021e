"""Command-line front end and experiment harness.

A batch is described by an ExperimentSpec (JSON file and/or CLI flags;
flags win). Every attack in the batch gets its own ledger and RNG
stream, artifacts land under one timestamped directory, and the summary
table is produced by compute_metrics on the written results, never by a
second code path. Exit status: 0 when every attack succeeded, 2 when
some failed, 1 on configuration or transport errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field

from .attack import (
    AttackConfig,
    attack_full_info,
    attack_partial_info,
    compute_metrics,
    default_size_candidates,
)
from .core import gray_image, save_image, save_ppm
from .distributions import SearchDistribution
from .oracle import (
    ModelSpec,
    QueryLedger,
    RemoteEndpointConfig,
    RemoteTopKModel,
    ResponseParseError,
    TransportError,
    generate_local_model,
    load_model,
)
from .size_select import SizeSelectionConfig, select_region_size

AUTH_TOKEN_ENV = "RNA_API_TOKEN"


@dataclass
class ExperimentSpec:
    """One batch of attacks: oracle source, mode, targets, shared knobs.

    attack holds AttackConfig keyword arguments shared by every run
    (target and seed are filled in per run). targets is a list, "all"
    (every class of a local model), or "auto" (partial mode only: each
    run promotes the attack's own lowest-ranked pick). height, width and
    channels pin the canvas for remote oracles; local models supply
    their own dims.
    """

    mode: str
    model_path: str | None = None
    remote_config: str | None = None
    targets: object = None
    repetitions: int = 1
    seed_base: int = 0
    out_dir: str = "runs"
    jobs: int = 1
    height: int | None = None
    width: int | None = None
    channels: int | None = None
    attack: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("full", "partial"):
            raise ValueError(f"mode must be 'full' or 'partial', got {self.mode!r}")
        if (self.model_path is None) == (self.remote_config is None):
            raise ValueError("give exactly one oracle source: model_path or remote_config")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if self.seed_base < 0:
            raise ValueError(f"seed_base must be non-negative, got {self.seed_base}")
        if self.targets is None:
            self.targets = "all" if self.mode == "full" else "auto"
        if self.targets == "auto":
            if self.mode != "partial":
                raise ValueError("targets='auto' only makes sense in partial mode")
        elif self.targets != "all":
            targets = list(self.targets)
            if not targets:
                raise ValueError("target list must be non-empty")
            self.targets = targets
        unknown = set(self.attack) - set(AttackConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown attack config keys: {sorted(unknown)}")
        for fixed in ("target", "seed"):
            if fixed in self.attack:
                raise ValueError(f"attack.{fixed} is assigned per run; set it at the spec level")

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown experiment spec keys: {sorted(extra)}")
        if "mode" not in d:
            raise ValueError("experiment spec needs a mode")
        return cls(**d)

    def to_dict(self):
        return {
            "mode": self.mode,
            "model_path": self.model_path,
            "remote_config": self.remote_config,
            "targets": self.targets,
            "repetitions": self.repetitions,
            "seed_base": self.seed_base,
            "out_dir": self.out_dir,
            "jobs": self.jobs,
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "attack": dict(self.attack),
        }


def _attack_config(spec, target, seed):
    kwargs = dict(spec.attack)
    dist = kwargs.pop("distribution", None)
    if isinstance(dist, dict):
        dist = SearchDistribution(**dist)
    size_cfg = kwargs.pop("size_config", None)
    if isinstance(size_cfg, dict):
        size_cfg = SizeSelectionConfig(**size_cfg)
    kwargs.setdefault("query_budget", 10_000)
    if "region" in kwargs and kwargs["region"] is not None:
        kwargs["region"] = tuple(kwargs["region"])
    return AttackConfig(
        target=target, seed=seed, distribution=dist, size_config=size_cfg, **kwargs
    )


def _oracle_factory(spec, auth_token):
    """Return (make_model, shared_model_or_None) validated against the mode.

    Local models load once and are shared (predictions are pure); remote
    handles are built per task so concurrent attacks keep separate HTTP
    sessions. Capability mismatches fail here, before any query.
    """
    if spec.model_path is not None:
        model = load_model(spec.model_path)
        make = lambda: model
    else:
        cfg = RemoteEndpointConfig.from_json(spec.remote_config)
        model = RemoteTopKModel(cfg, auth_token=auth_token)
        make = lambda: RemoteTopKModel(cfg, auth_token=auth_token)
    if spec.mode == "full" and not model.supports_full:
        raise ValueError("full-information mode needs full probability output; "
                         "this oracle only provides top-k")
    if spec.mode == "partial" and not model.supports_topk:
        raise ValueError("partial-information mode needs top-k output")
    return make, model


def _resolve_dims(spec, model):
    dims = getattr(model, "input_dims", None)
    given = (spec.height, spec.width, spec.channels)
    if all(v is None for v in given):
        if dims is None:
            raise ValueError("remote oracles need explicit height/width/channels in the spec")
        return dims
    if any(v is None for v in given):
        raise ValueError("give all of height, width, channels or none of them")
    if dims is not None and tuple(given) != tuple(dims):
        raise ValueError(f"spec dims {given} conflict with model dims {dims}")
    return tuple(given)


def _resolve_targets(spec, model):
    if spec.targets == "auto":
        return [None]
    if spec.targets != "all":
        return list(spec.targets)
    classes = getattr(model, "classes", None)
    if classes is None:
        raise ValueError("targets='all' needs a local model with a known class count")
    return list(range(classes))


def _slug(value):
    if value is None:
        return "auto"
    s = re.sub(r"[^A-Za-z0-9_-]+", "-", str(value)).strip("-")
    return s or "target"


def _make_run_dir(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = os.path.join(out_dir, f"run-{stamp}")
    path = base
    suffix = 1
    while os.path.exists(path):
        path = f"{base}-{suffix}"
        suffix += 1
    os.makedirs(path)
    return path


def _write_json(path, payload):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _run_one(make_model, mode, dims, cfg):
    model = make_model()
    ledger = QueryLedger(budget=cfg.query_budget)
    x0 = gray_image(*dims)
    run = attack_full_info if mode == "full" else attack_partial_info
    result = run(x0, model, cfg, ledger)
    return result, ledger.snapshot()


def run_experiment(spec, auth_token=None):
    """Execute a batch and write its artifacts; returns (run_dir, summary).

    The summary dict is a pure function of the spec and the oracle, so a
    rerun with the same seed base produces byte-identical summary.json
    (the timestamp lives only in the directory name).
    """
    make_model, model = _oracle_factory(spec, auth_token)
    dims = _resolve_dims(spec, model)
    targets = _resolve_targets(spec, model)

    tasks = []
    for ti, target in enumerate(targets):
        for rep in range(spec.repetitions):
            seed = spec.seed_base + ti * spec.repetitions + rep
            name = f"{_slug(target)}_r{rep}"
            tasks.append((name, target, seed, _attack_config(spec, target, seed)))

    run_dir = _make_run_dir(spec.out_dir)
    for sub in ("results", "trajectories", "images"):
        os.makedirs(os.path.join(run_dir, sub))
    _write_json(os.path.join(run_dir, "spec.json"), spec.to_dict())

    rows = {}
    results = {}
    errors = {}

    def execute(task):
        name, target, seed, cfg = task
        return name, _run_one(make_model, spec.mode, dims, cfg)

    if spec.jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            futures = {pool.submit(execute, t): t for t in tasks}
            for fut in concurrent.futures.as_completed(futures):
                name, target, seed, _ = futures[fut]
                try:
                    _, (result, phases) = fut.result()
                    results[name] = (target, seed, result, phases)
                except (TransportError, ResponseParseError, ValueError) as e:
                    errors[name] = str(e)
    else:
        for task in tasks:
            name, target, seed, _ = task
            try:
                _, (result, phases) = execute(task)
                results[name] = (target, seed, result, phases)
            except (TransportError, ResponseParseError, ValueError) as e:
                errors[name] = str(e)

    for name in sorted(results):
        target, seed, result, phases = results[name]
        row = result.to_dict()
        row.update({"name": name, "target": target, "seed": seed, "phases": phases})
        rows[name] = row
        _write_json(os.path.join(run_dir, "results", f"{name}.json"), row)
        with open(os.path.join(run_dir, "trajectories", f"{name}.jsonl"), "w") as f:
            for record in result.trajectory:
                f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        img_base = os.path.join(run_dir, "images", name)
        save_image(img_base + ".rna1", result.final_image)
        channels = result.final_image.shape[2]
        if channels in (1, 3):
            save_ppm(img_base + (".pgm" if channels == 1 else ".ppm"), result.final_image)

    summary = {
        "runs": [rows[name] for name in sorted(rows)],
        "errors": [{"name": n, "error": errors[n]} for n in sorted(errors)],
    }
    if results:
        metrics = compute_metrics([r for _, _, r, _ in results.values()])
        summary["metrics"] = metrics.to_dict()
    _write_json(os.path.join(run_dir, "summary.json"), summary)
    return run_dir, summary


def query_histogram(results_dir, bin_width=500):
    """Bin successful runs' query counts into [i*w, (i+1)*w) intervals.

    Bins are contiguous from zero through the largest count; empty
    interior bins are kept so the output plots directly.
    """
    if bin_width < 1:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    try:
        files = sorted(os.listdir(results_dir))
    except FileNotFoundError:
        raise ValueError(f"results directory {results_dir} does not exist")
    counts = []
    for fname in files:
        if not fname.endswith(".json"):
            continue
        with open(os.path.join(results_dir, fname)) as f:
            row = json.load(f)
        if row.get("success"):
            counts.append(int(row["queries"]))
    if not counts:
        raise ValueError(f"no successful results under {results_dir}")
    n_bins = max(c // bin_width for c in counts) + 1
    bins = []
    for i in range(n_bins):
        lo, hi = i * bin_width, (i + 1) * bin_width
        bins.append((lo, hi, sum(1 for c in counts if lo <= c < hi)))
    return bins


def _print_summary(summary, stream=None):
    stream = stream if stream is not None else sys.stdout
    print(f"{'name':24} {'target':>8} {'seed':>6} {'ok':>3} {'queries':>8} "
          f"{'l2':>8} {'linf':>6}  status", file=stream)
    for row in summary["runs"]:
        print(f"{row['name']:24} {str(row['target']):>8} {row['seed']:>6} "
              f"{'yes' if row['success'] else 'no':>3} {row['queries']:>8} "
              f"{row['l2']:>8.3f} {row['linf']:>6.3f}  {row['status']}", file=stream)
    for err in summary["errors"]:
        print(f"{err['name']:24} ERROR {err['error']}", file=stream)
    metrics = summary.get("metrics")
    if metrics:
        q = "-" if metrics["q_avg"] is None else f"{metrics['q_avg']:.1f}"
        l2 = "-" if metrics["l2_avg"] is None else f"{metrics['l2_avg']:.3f}"
        li = "-" if metrics["linf_avg"] is None else f"{metrics['linf_avg']:.3f}"
        print(f"success rate {metrics['success_rate']:.3f} "
              f"({metrics['successes']}/{metrics['attempts']}), "
              f"avg queries {q}, avg l2 {l2}, avg linf {li}", file=stream)


def _exit_code(summary):
    if summary["errors"]:
        return 1
    runs = summary["runs"]
    if runs and all(r["success"] for r in runs):
        return 0
    return 2


def _add_attack_flags(p):
    p.add_argument("--spec", help="experiment spec JSON; flags override its fields")
    p.add_argument("--model", help="local model file")
    p.add_argument("--remote-config", help="remote endpoint config JSON")
    p.add_argument("--target", action="append", help="target class id or label (repeatable)")
    p.add_argument("--all-targets", action="store_true", help="attack every class of a local model")
    p.add_argument("--h", type=int, help="square region size (h = w)")
    p.add_argument("--auto-size", action="store_true", help="pick the region size by warm-up")
    p.add_argument("--eta", type=float, help="momentum factor in [0, 1]")
    p.add_argument("--gamma", type=float, help="step size per iteration")
    p.add_argument("--sigma", type=float, help="gaussian search scale")
    p.add_argument("--b", type=float, help="laplace search scale")
    p.add_argument("--dist", choices=["gaussian", "laplace"], help="search distribution")
    p.add_argument("--n", type=int, help="samples per gradient estimate (even)")
    p.add_argument("--budget", type=int, help="query budget per attack")
    p.add_argument("--max-iter", type=int, help="iteration cap per attack")
    p.add_argument("--k", type=int, help="top-k width (partial mode)")
    p.add_argument("--confidence", type=float, help="quit threshold on the target score")
    p.add_argument("--seed", type=int, help="seed base for the batch")
    p.add_argument("--jobs", type=int, help="concurrent attacks")
    p.add_argument("--reps", type=int, help="repetitions per target")
    p.add_argument("--out", help="output directory for run artifacts")


def _parse_target(raw):
    try:
        return int(raw)
    except ValueError:
        return raw


def _build_spec(args, mode):
    base = {}
    if args.spec:
        with open(args.spec) as f:
            base = json.load(f)
    base["mode"] = mode
    if args.model:
        base["model_path"] = args.model
        base.pop("remote_config", None)
    if args.remote_config:
        base["remote_config"] = args.remote_config
        base.pop("model_path", None)
    if args.all_targets:
        base["targets"] = "all"
    elif args.target:
        base["targets"] = [_parse_target(t) for t in args.target]
    if args.seed is not None:
        base["seed_base"] = args.seed
    if args.jobs is not None:
        base["jobs"] = args.jobs
    if args.reps is not None:
        base["repetitions"] = args.reps
    if args.out is not None:
        base["out_dir"] = args.out

    attack = dict(base.get("attack", {}))
    if args.h is not None:
        attack["region"] = (args.h, args.h)
        attack.pop("auto_size", None)
    if args.auto_size:
        attack["auto_size"] = True
        attack.pop("region", None)
    for flag, key in (("eta", "eta"), ("gamma", "gamma"), ("n", "n"),
                      ("budget", "query_budget"), ("max_iter", "max_iter"),
                      ("k", "k"), ("confidence", "confidence")):
        val = getattr(args, flag)
        if val is not None:
            attack[key] = val

    kind = args.dist
    if kind is None and (args.sigma is not None or args.b is not None):
        if args.sigma is not None and args.b is not None:
            raise ValueError("both --sigma and --b given; pick one or set --dist")
        kind = "gaussian" if args.sigma is not None else "laplace"
    if kind is not None:
        scale = args.sigma if kind == "gaussian" else args.b
        if scale is None:
            prior = attack.get("distribution")
            scale = prior.get("scale") if isinstance(prior, dict) else 0.1
        attack["distribution"] = {"kind": kind, "scale": scale}
    base["attack"] = attack
    return ExperimentSpec.from_dict(base)


def _cmd_attack(args, mode):
    spec = _build_spec(args, mode)
    token = os.environ.get(AUTH_TOKEN_ENV)
    run_dir, summary = run_experiment(spec, auth_token=token)
    print(f"artifacts: {run_dir}")
    _print_summary(summary)
    return _exit_code(summary)


def _cmd_select_size(args):
    model = load_model(args.model)
    if args.candidates:
        candidates = tuple(int(c) for c in args.candidates.split(","))
    else:
        candidates = default_size_candidates(model.input_dims[0], model.input_dims[1])
    cfg = SizeSelectionConfig(
        candidates=candidates,
        warmup_batch=args.n0,
        total_budget=args.budget,
        sigma=args.sigma,
        eta=args.eta,
        gamma=args.gamma,
        seed=args.seed,
    )
    ledger = QueryLedger(budget=cfg.total_budget)
    x0 = gray_image(*model.input_dims)
    report = select_region_size(x0, _parse_target(args.target), model, cfg, ledger)
    print(f"candidates {list(cfg.candidates)}, budget {cfg.total_budget}, "
          f"warm-up batch {cfg.warmup_batch}, iterations {report.warmup_iters}")
    for size in sorted(report.variations):
        print(f"  size {size:4d}  delta_h {report.variations[size]:+.6f}")
    print(f"chosen size: {report.chosen} ({report.queries} queries)")
    if args.out:
        _write_json(args.out, {
            "chosen": report.chosen,
            "variations": {str(s): v for s, v in report.variations.items()},
            "entropies": {str(s): v for s, v in report.entropies.items()},
            "warmup_iters": report.warmup_iters,
            "queries": report.queries,
            "budget": cfg.total_budget,
        })
    return 0


def _cmd_gen_model(args):
    hidden = tuple(int(h) for h in args.hidden.split(",")) if args.hidden else ()
    spec = ModelSpec(
        kind=args.kind,
        height=args.height,
        width=args.width,
        channels=args.channels,
        classes=args.classes,
        hidden=hidden,
        weight_scale=args.weight_scale,
        pool_period=args.pool_period,
        non_object=args.non_object,
        non_object_bias=args.non_object_bias,
    )
    model = generate_local_model(spec, args.seed, args.out)
    print(f"wrote {args.kind} model: {model.input_dims} -> {model.classes} classes at {args.out}")
    return 0


def _cmd_histogram(args):
    bins = query_histogram(args.results, bin_width=args.bin_width)
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["bin_lo", "bin_hi", "count"])
            writer.writerows(bins)
        print(f"wrote {len(bins)} bins to {args.out}")
    else:
        for lo, hi, count in bins:
            print(f"[{lo:6d}, {hi:6d})  {count}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="regionattack",
        description="Query-efficient input-free black-box attacks on classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_full = sub.add_parser("attack", help="full-information targeted attack batch")
    _add_attack_flags(p_full)
    p_part = sub.add_parser("partial-attack", help="two-stage top-k attack batch")
    _add_attack_flags(p_part)

    p_size = sub.add_parser("select-size", help="warm-up region size selection")
    p_size.add_argument("--model", required=True)
    p_size.add_argument("--target", required=True)
    p_size.add_argument("--candidates", help="comma-separated square sizes")
    p_size.add_argument("--n0", type=int, default=10, help="warm-up batch size")
    p_size.add_argument("--budget", type=int, default=200, help="total selection budget")
    p_size.add_argument("--sigma", type=float, default=0.1)
    p_size.add_argument("--eta", type=float, default=0.4)
    p_size.add_argument("--gamma", type=float, default=0.01)
    p_size.add_argument("--seed", type=int, default=0)
    p_size.add_argument("--out", help="write the selection log JSON here")

    p_gen = sub.add_parser("gen-model", help="generate a local test model")
    p_gen.add_argument("--kind", choices=["linear", "mlp"], required=True)
    p_gen.add_argument("--height", type=int, required=True)
    p_gen.add_argument("--width", type=int, required=True)
    p_gen.add_argument("--channels", type=int, default=1)
    p_gen.add_argument("--classes", type=int, required=True)
    p_gen.add_argument("--hidden", help="comma-separated hidden widths (mlp)")
    p_gen.add_argument("--weight-scale", type=float, default=1.0)
    p_gen.add_argument("--pool-period", type=int, default=0)
    p_gen.add_argument("--non-object", type=int, default=-1)
    p_gen.add_argument("--non-object-bias", type=float, default=0.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    p_hist = sub.add_parser("histogram", help="bin successful query counts")
    p_hist.add_argument("--results", required=True, help="results/ directory of a run")
    p_hist.add_argument("--bin-width", type=int, default=500)
    p_hist.add_argument("--out", help="write CSV here instead of printing")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "attack":
            return _cmd_attack(args, "full")
        if args.command == "partial-attack":
            return _cmd_attack(args, "partial")
        if args.command == "select-size":
            return _cmd_select_size(args)
        if args.command == "gen-model":
            return _cmd_gen_model(args)
        if args.command == "histogram":
            return _cmd_histogram(args)
        parser.error(f"unknown command {args.command}")
    except (ValueError, OSError, TransportError, ResponseParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
