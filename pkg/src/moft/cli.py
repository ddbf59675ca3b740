"""``moft`` command-line entry point.

Exit codes: 0 success, 1 validation error (bad arguments, malformed files),
2 numerical failure (including a failing ``verify`` suite).
"""
import argparse
import csv
import io
import json
import os
import sys
import warnings

from . import __version__
from .adapter import Method, count_params
from .budget import METHODS as MEM_METHODS
from .budget import NEEDS_M, NEEDS_RANK, LayerConfig, act_method, compare, formula
from .checkpoint import load_checkpoint, restore_adapter, save_checkpoint
from .errors import MoftError, NumericalFailure
from .subspace import EXACT, Variant, decompose, randomized
from .tensorio import file_sha256, read_tensor, write_tensor
from .trainer import TrainConfig, generate_task, train
from .verify import run_suite

HISTORY_COLUMNS = ("step", "epoch", "train_loss", "test_loss", "r_orth_residual")
BREAKDOWN_KEYS = ("attention", "softmax", "dropout_masks", "ffn", "layernorm", "adapter_delta")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    g.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="suppress diagnostics")
    return p


def _on_off(v):
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return v == "on"


def build_parser():
    common = _common()
    parser = _Parser(prog="moft", description="Orthogonal fine-tuning in a principal subspace.",
                     parents=[common])
    parser.add_argument("--version", action="version", version=f"moft {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("decompose", parents=[common], help="split weights into A, B and W_res")
    p.add_argument("--input", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="moft")
    p.add_argument("--svd", choices=["exact", "rand"], default="exact")
    p.add_argument("--n-iter", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")

    p = sub.add_parser("merge", parents=[common], help="fold a checkpoint into dense weights")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=["f32", "f64"], default="f64")

    p = sub.add_parser("train", parents=[common], help="fit an adapter on a planted synthetic task")
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--r-star", type=int, help="planted rank (default: --rank)")
    p.add_argument("--kind", choices=["rotation", "additive", "zero"], default="rotation")
    p.add_argument("--epochs", type=int, default=100)
    lr = p.add_mutually_exclusive_group()
    lr.add_argument("--lr", type=float, help="constant step size (default 0.01)")
    lr.add_argument("--pl-mu", type=float, help="use the decaying schedule with this mu")
    p.add_argument("--scaling", type=_on_off, default=False, metavar="on|off")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--n-train", type=int, default=256)
    p.add_argument("--n-test", type=int, default=128)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", required=True, help="history CSV path")
    p.add_argument("--save-weights", help="also write the task's pre-trained weights")

    p = sub.add_parser("verify", parents=[common], help="run the property suite on a weight file")
    p.add_argument("--weights", required=True)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="moft")

    p = sub.add_parser("params", parents=[common], help="trainable-parameter count")
    p.add_argument("--method", required=True, choices=[m.value for m in Method])
    p.add_argument("--r", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--d-min", type=int)
    p.add_argument("--modules", type=int, default=1)
    p.add_argument("--no-scaling", action="store_true", help="exclude MOFT's alpha and beta")

    p = sub.add_parser("mem", parents=[common], help="activation memory of one layer")
    p.add_argument("--method", required=True, choices=list(MEM_METHODS))
    for name in ("b", "s", "h", "a"):
        p.add_argument(f"--{name}", type=int, required=True)
    p.add_argument("--r", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--bytes-per-act", type=int, default=4, choices=[2, 4])

    p = sub.add_parser("mem-compare", parents=[common], help="memory sweep from a JSON config, as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="write CSV here instead of stdout")
    return parser


# --------------------------------------------------------------------------
# Output helpers
# --------------------------------------------------------------------------

class _Ctx:
    def __init__(self, args, stdout, stderr):
        self.args = args
        self.stdout = stdout
        self.stderr = stderr

    def out(self, text=""):
        print(text, file=self.stdout)

    def emit_json(self, obj):
        self.out(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False))

    def info(self, text):
        if not self.args.quiet:
            print(text, file=self.stderr)


def _canonical_args(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("json", "quiet", "handler")}


def run_manifest(args, inputs, outputs=None):
    """Provenance record: command, canonical args, input hashes, tool version."""
    m = {
        "command": args.command,
        "args": _canonical_args(args),
        "input_hashes": {role: file_sha256(path) for role, path in sorted(inputs.items())},
        "tool_version": __version__,
    }
    if outputs:
        m["output_hashes"] = {role: file_sha256(path) for role, path in sorted(outputs.items())}
    return m


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_decompose(ctx):
    a = ctx.args
    W = read_tensor(a.input)
    mode = EXACT if a.svd == "exact" else randomized(a.n_iter, a.seed)
    dec = decompose(W, a.rank, Variant(a.variant), mode)
    os.makedirs(a.out_dir, exist_ok=True)
    outputs = {}
    for name, m in (("A", dec.A), ("B", dec.B), ("Wres", dec.W_res)):
        path = os.path.join(a.out_dir, f"{name}.mtb")
        write_tensor(path, m, a.dtype)
        outputs[name] = path
    manifest = run_manifest(a, {"input": a.input}, outputs)
    manifest.update(rank=dec.r, variant=dec.variant.value, svd_mode=mode.to_dict(),
                    input_hash=manifest["input_hashes"]["input"])
    _write_json(os.path.join(a.out_dir, "manifest.json"), manifest)
    summary = {"rank": dec.r, "variant": dec.variant.value, "svd_mode": mode.to_dict(),
               "singular_values": dec.singular_values.tolist(),
               "rank_deficient": dec.rank_deficient, "out_dir": a.out_dir}
    if a.json:
        ctx.emit_json(summary)
    else:
        ctx.out(f"rank {dec.r} {dec.variant.value} split written to {a.out_dir}")
    return 0


def cmd_merge(ctx):
    a = ctx.args
    manifest, params = load_checkpoint(a.ckpt)
    W = read_tensor(a.weights)
    merged = restore_adapter(manifest, params, W).merge()
    digest = write_tensor(a.out, merged, a.dtype)
    _write_json(a.out + ".manifest.json",
                run_manifest(a, {"ckpt": a.ckpt, "weights": a.weights}, {"out": a.out}))
    if a.json:
        ctx.emit_json({"out": a.out, "sha256": digest, "shape": list(merged.shape)})
    else:
        ctx.out(a.out)
    return 0


def write_history_csv(path, history):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for h in history:
        w.writerow([_fmt(getattr(h, c)) for c in HISTORY_COLUMNS])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def cmd_train(ctx):
    a = ctx.args
    r_star = a.rank if a.r_star is None else a.r_star
    task = generate_task(a.d, a.n, r_star, scaling=a.scaling, seed=a.task_seed, kind=a.kind,
                         n_train=a.n_train, n_test=a.n_test)
    if a.pl_mu is not None:
        cfg = TrainConfig(rank=a.rank, epochs=a.epochs, schedule="pl_decay", mu=a.pl_mu,
                          batch_size=a.batch_size, seed=a.seed, scaling_enabled=a.scaling)
    else:
        cfg = TrainConfig(rank=a.rank, epochs=a.epochs, lr=0.01 if a.lr is None else a.lr,
                          batch_size=a.batch_size, seed=a.seed, scaling_enabled=a.scaling)
    result = train(task, cfg)
    save_checkpoint(a.out, result.adapter, seed=a.seed, extra={"task_seed": a.task_seed, "kind": a.kind})
    write_history_csv(a.log, result.history)
    outputs = {"checkpoint": a.out, "history": a.log}
    if a.save_weights:
        write_tensor(a.save_weights, task.W_pre)
        outputs["weights"] = a.save_weights
    _write_json(a.out + ".manifest.json", run_manifest(a, {}, outputs))
    final = result.final
    var_y = task.target_variance()
    summary = {
        "steps": final.step,
        "initial_train_loss": result.history[0].train_loss,
        "final_train_loss": final.train_loss,
        "final_test_loss": final.test_loss,
        "relative_test_loss": final.test_loss / var_y if var_y > 0 else final.test_loss,
        "r_orth_residual": final.r_orth_residual,
    }
    if a.json:
        ctx.emit_json(summary)
    else:
        for k, v in summary.items():
            ctx.out(f"{k}: {_fmt(v)}")
    return 0


def cmd_verify(ctx):
    a = ctx.args
    W = read_tensor(a.weights)
    report = run_suite(W, a.rank, a.trials, a.seed, Variant(a.variant))
    report["input_hash"] = file_sha256(a.weights)
    ctx.emit_json(report)
    if not report["passes"]:
        print(f"verify: failing properties: {', '.join(report['failing'])}", file=ctx.stderr)
        return 2
    return 0


def cmd_params(ctx):
    a = ctx.args
    dims = {k: getattr(a, k) for k in ("d", "n", "r", "m", "b", "k", "d_min")}
    total = count_params(a.method, dims, a.modules, scaling=not a.no_scaling)
    if a.json:
        ctx.emit_json({"method": a.method, "modules": a.modules, "params": total})
    else:
        ctx.out(str(total))
    return 0


def cmd_mem(ctx):
    a = ctx.args
    cfg = LayerConfig(a.b, a.s, a.h, a.a, r=a.r, m=a.m, bytes_per_act=a.bytes_per_act)
    est = act_method(cfg, a.method)
    if a.json:
        ctx.emit_json({**est.to_dict(), "formula": formula(a.method), "config": cfg.to_dict()})
    else:
        ctx.out(str(est.total_bytes))
        for k in BREAKDOWN_KEYS:
            ctx.out(f"  {k}: {est.breakdown[k]}")
    return 0


def _load_sweep(path):
    with open(path, encoding="utf-8") as fh:
        try:
            sweep = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(sweep, dict) or not isinstance(sweep.get("configs"), list):
        raise UsageError(f"{path}: expected an object with a 'configs' list")
    methods = sweep.get("methods", list(MEM_METHODS))
    cfgs = []
    for i, c in enumerate(sweep["configs"]):
        if not isinstance(c, dict):
            raise UsageError(f"{path}: configs[{i}] is not an object")
        cfgs.append(LayerConfig.from_dict(c))
    return cfgs, methods


def cmd_mem_compare(ctx):
    a = ctx.args
    cfgs, methods = _load_sweep(a.config)
    # Methods needing r or m are skipped for configs that lack them.
    rows = []
    for i, cfg in enumerate(cfgs):
        usable = [m for m in methods
                  if not (str(m).lower() in NEEDS_RANK and cfg.r is None)
                  and not (str(m).lower() in NEEDS_M and cfg.m is None)]
        if usable:
            rows.extend((i, row) for row in compare([cfg], usable))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cfg_keys = ("b", "s", "h", "a", "r", "m", "bytes_per_act")
    w.writerow(("config_index",) + cfg_keys + ("method", "total_bytes", "ratio_vs_fft") + BREAKDOWN_KEYS)
    for i, row in rows:
        cd = row.config.to_dict()
        w.writerow([i] + ["" if cd[k] is None else cd[k] for k in cfg_keys]
                   + [row.estimate.method, row.estimate.total_bytes, repr(row.ratio_vs_fft)]
                   + [row.estimate.breakdown[k] for k in BREAKDOWN_KEYS])
    text = buf.getvalue()
    if a.out:
        with open(a.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        _write_json(a.out + ".manifest.json", run_manifest(a, {"config": a.config}, {"out": a.out}))
        ctx.info(f"wrote {len(rows)} rows to {a.out}")
    else:
        ctx.stdout.write(text)
    return 0


HANDLERS = {
    "decompose": cmd_decompose,
    "merge": cmd_merge,
    "train": cmd_train,
    "verify": cmd_verify,
    "params": cmd_params,
    "mem": cmd_mem,
    "mem-compare": cmd_mem_compare,
}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=stderr)
        return 1
    if args.command is None:
        parser.print_usage(stderr)
        return 1
    for name, default in (("seed", 0), ("json", False), ("quiet", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    ctx = _Ctx(args, stdout, stderr)
    try:
        with warnings.catch_warnings():
            if args.quiet:
                warnings.simplefilter("ignore")
            else:
                warnings.simplefilter("default")
                warnings.showwarning = lambda msg, cat, *rest: print(f"warning: {msg}", file=stderr)
            return HANDLERS[args.command](ctx)
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=stderr)
        return 2
    except (MoftError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
