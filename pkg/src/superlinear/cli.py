"""Command-line entry point: audits, scaling sweeps, gradient checks, toy training and bucket simulation.

Every subcommand prints its CSV to stdout. With ``--out DIR`` the CSVs are
also written there, followed by a ``run.json`` manifest. Exit codes: 0 on
success, 1 when a check fails or a module raises, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import scheduler
from .anchors import anchors
from .attention import dense_attention
from .config import EXTENDED, TIGHT, AttnConfig, SequenceTensors, rng_stream, validate_config
from .errors import SuperlinearError
from .fitting import fit_exponent
from .gradients import GRADCHECK_CONFIG, gradcheck, random_instance
from .layer import decode_step_keys, forward_prefill, measure_scaling
from .spans import audit_coverage, audit_coverage_range
from .toy import TOY_CONFIG, ToyTask, toy_learnability

EQUIVALENCE_TOL = 1e-12
GRADCHECK_TOL = 1e-5

# short aliases for the most used config fields
_ALIASES = {"b": "backward_factor", "f": "forward_factor", "w": "window", "k": "top_k"}


class CheckFailed(Exception):
    """A subcommand's own pass criterion did not hold."""


@dataclasses.dataclass
class RunManifest:
    command: str
    config_snapshot: dict
    seed: int
    float_width: int
    outputs: list[str]
    timestamp: str


@dataclasses.dataclass
class Table:
    name: str
    header: Sequence[str]
    rows: list[Sequence]

    def render(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.header) + "\n")
        for row in self.rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    g = p.add_argument_group("configuration")
    g.add_argument("--config", type=Path, help="flat JSON file of config fields")
    for f in dataclasses.fields(AttnConfig):
        if f.name == "seed":
            continue
        kind = int if f.type in ("int", int) else float
        g.add_argument(f"--{f.name}", f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=None)
    g.add_argument("--p", type=float, default=None, help="set both exponents")
    for short, name in _ALIASES.items():
        kind = int if name in ("window", "top_k") else float
        g.add_argument(f"--{short}", dest=name, type=kind, default=None, help=f"alias of --{name}")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--float-width", type=int, choices=(32, 64), default=64)
    g.add_argument("--out", type=Path, default=None, help="directory for CSV files and run.json")
    return p


def build_config(args: argparse.Namespace, base: AttnConfig) -> AttnConfig:
    cfg = AttnConfig.from_json(args.config) if args.config else base
    changes = {}
    if args.p is not None:
        changes["search_exponent"] = changes["span_exponent"] = args.p
    for f in dataclasses.fields(AttnConfig):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "seed":
            changes[f.name] = v
    changes["seed"] = args.seed
    return validate_config(cfg.replace(**changes))


def _dtype(args):
    return np.float32 if args.float_width == 32 else np.float64


# ---------------------------------------------------------------------------
# subcommands; each returns its tables and an optional failure message


def cmd_anchors(args, cfg):
    a = anchors(args.i, cfg.search_exponent)
    return [Table("anchors", ("i", "s", "anchor"), [(args.i, s, t) for s, t in enumerate(a.anchors)])], None


def cmd_audit(args, cfg):
    first = audit_coverage_range(args.L, cfg, exclude_window_anchors=args.routable_only)
    header = ("verdict", "L", "first_failing_i")
    if first is None:
        return [Table("audit", header, [("covered", args.L, -1)])], None
    rep = audit_coverage(first, cfg, exclude_window_anchors=args.routable_only)
    rows = [(first, j) for j in rep.uncovered_positions]
    verdict = Table("audit", header, [("uncovered", args.L, first)])
    return [verdict, Table("uncovered", ("i", "position"), rows)], f"first gap at i={first}"


def cmd_scaling(args, cfg):
    res = measure_scaling(args.lengths, cfg, trials=args.trials, geometry_only=args.geometry_only)
    rows = [(r.L, r.anchors_scored, r.keys_attended, res.slope_search, res.slope_attend) for r in res.rows]
    tables = [Table("scaling", ("L", "anchors_scored", "keys_attended", "slope_search", "slope_attend"), rows)]
    if args.dense:
        d = measure_scaling(args.lengths, cfg, dense=True)
        tables.append(Table("dense", ("L", "keys_attended", "slope"), [(r.L, r.keys_attended, d.slope_attend) for r in d.rows]))
    if args.decode:
        pos = np.asarray(args.lengths, dtype=np.int64) - 1
        keys = decode_step_keys(pos, cfg, trials=args.trials)
        slope, _ = fit_exponent(pos, keys, min_points=2)
        tables.append(Table("decode", ("i", "keys_attended", "slope"), [(int(i), float(k), slope) for i, k in zip(pos, keys)]))
    return tables, None


def cmd_learn(args, cfg):
    if args.task != "niah-toy":
        raise CheckFailed(f"unknown task {args.task!r}")
    task = ToyTask(length=args.L, dim=cfg.head_dim, region=args.region)
    curve = toy_learnability(task, cfg, args.steps, seed=args.seed)
    train = Table("learn", ("step", "loss", "routing_accuracy"), list(zip(curve.step, curve.loss, curve.routing_accuracy)))
    ev = Table("learn_eval", ("step", "routing_accuracy"), list(zip(curve.eval_step, curve.eval_accuracy)))
    return [train, ev], None


def cmd_buckets(args, cfg):
    items = scheduler.prefill_workload(args.L, cfg)
    buckets = scheduler.bucketize(items, cfg.block_size)
    bad = scheduler.footprint_violations(buckets, cfg.block_size)
    st = scheduler.simulate_dispatch(buckets, args.workers, args.capacity)
    sort_ops, permute = scheduler.sorting_baseline_cost(len(items), cfg.head_dim, 4 if args.float_width == 32 else 8, cfg.num_heads)
    hist = Table("histogram", ("end_block", "length_blocks", "count"), scheduler.histogram_rows(st))
    header = ("num_buckets", "total_items", "tiles_issued", "occupancy", "steal_events", "makespan", "utilization",
              "bucketize_passes", "sort_ops", "permute_bytes")
    row = (st.num_buckets, st.total_items, st.tiles_issued, st.occupancy_proxy, st.steal_events, st.makespan,
           st.utilization, scheduler.bucketize_pass_count(buckets), sort_ops, permute)
    return [Table("summary", header, [row]), hist], (f"{len(bad)} footprint violations" if bad else None)


def cmd_gradcheck(args, cfg):
    rows = []
    worst = 0.0
    for n in range(args.instances):
        seq, d_O = random_instance(args.L, cfg.head_dim, args.seed, n)
        res = gradcheck(seq, cfg, d_O, eps=args.eps)
        for name, err in res.max_rel_error.items():
            rows.append((n, name, err, res.excluded[name], res.components[name]))
        worst = max(worst, res.worst)
    fail = f"max relative error {worst:.3e} >= {GRADCHECK_TOL:g}" if worst >= GRADCHECK_TOL else None
    return [Table("gradcheck", ("instance", "tensor", "max_rel_error", "excluded", "compared"), rows)], fail


def cmd_equivalence(args, cfg):
    rng = rng_stream(args.seed, f"equivalence/{args.L}")
    seq = SequenceTensors.random(args.L, cfg.head_dim, rng, dtype=_dtype(args))
    out = forward_prefill(seq, cfg, workers=args.workers).O
    diff = float(np.max(np.abs(out - dense_attention(seq.Q, seq.K, seq.V))))
    fail = None
    if cfg.window >= args.L and not diff < EQUIVALENCE_TOL:
        fail = f"max abs diff {diff:.3e} >= {EQUIVALENCE_TOL:g}"
    return [Table("equivalence", ("L", "window", "max_abs_diff"), [(args.L, cfg.window, diff)])], fail


def _lengths(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    ap = argparse.ArgumentParser(prog="superlinear", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, base, help_):
        sp = sub.add_parser(name, parents=[parent], help=help_, allow_abbrev=False)
        sp.set_defaults(func=fn, base=base)
        return sp

    sp = add("anchors", cmd_anchors, EXTENDED, "list the anchors of one query")
    sp.add_argument("--i", type=int, required=True)

    sp = add("audit", cmd_audit, EXTENDED, "check that every position is reachable")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--routable-only", action="store_true", help="ignore anchors inside the window")

    sp = add("scaling", cmd_scaling, TIGHT, "counter totals and log-log slopes")
    sp.add_argument("--lengths", type=_lengths, default=[1 << e for e in range(10, 17)])
    sp.add_argument("--geometry-only", action="store_true", help="content-free routing (no tensors)")
    sp.add_argument("--trials", type=int, default=1)
    sp.add_argument("--dense", action="store_true", help="also emit the dense oracle table")
    sp.add_argument("--decode", action="store_true", help="also emit per-step decode keys at i = L-1")

    sp = add("learn", cmd_learn, TOY_CONFIG, "train the router on the synthetic needle task")
    sp.add_argument("--task", default="niah-toy", choices=("niah-toy",))
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--L", type=int, default=1024)
    sp.add_argument("--region", default="all", choices=("all", "outside_window", "inside_window"))

    sp = add("buckets", cmd_buckets, EXTENDED, "simulate bucketed span dispatch")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--block", dest="block_size", type=int, default=None)
    sp.add_argument("--capacity", type=int, default=16)
    sp.add_argument("--workers", type=int, default=8, help="simulated workers")

    sp = add("gradcheck", cmd_gradcheck, GRADCHECK_CONFIG, "analytic vs finite-difference gradients")
    sp.add_argument("--L", type=int, default=64)
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--eps", type=float, default=1e-5)

    sp = add("equivalence", cmd_equivalence, EXTENDED, "routed layer vs dense attention")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--workers", type=int, default=1, help="prefill threads")
    return ap


def _write_outputs(args, cfg, tables: list[Table]) -> None:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in tables:
        path = out / f"{t.name}.csv"
        path.write_text(t.render())
        paths.append(str(path))
    manifest = RunManifest(args.command, cfg.to_dict(), args.seed, args.float_width, paths,
                           datetime.now(timezone.utc).isoformat(timespec="seconds"))
    (out / "run.json").write_text(json.dumps(dataclasses.asdict(manifest), indent=2) + "\n")


def run(argv: Optional[Sequence[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = build_config(args, args.base)
        tables, failure = args.func(args, cfg)
    except (SuperlinearError, ValueError, CheckFailed, OSError) as e:
        print(f"error: {e}", file=stderr)
        return 1
    stdout.write("\n".join(t.render() for t in tables))
    if args.out is not None:
        _write_outputs(args, cfg, tables)
    if failure:
        print(f"fail: {failure}", file=stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
