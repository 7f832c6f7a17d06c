"""Command-line entry point: generate, train, infer, decode, compare.

Exit codes: 0 success, 1 usage error (bad flags, config fields, missing or
malformed inputs), 2 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .compare import (
    COMPARISON_FIELDS,
    FROBENIUS_FIELDS,
    comparison_rows,
    format_table,
    frobenius_rows,
    parameter_rows,
    write_rows,
)
from .cvae import TrainConfig, build_cvae, load_model, sample_prior, save_model, train
from .data import PriorDataset, read_dataset, write_dataset
from .experiments import (
    INFER_KINDS,
    KIND_ALIASES,
    PRESET_NAMES,
    NetConfig,
    Observations,
    PresetError,
    apply_overrides,
    build_posterior,
    generate_dataset,
    get_preset,
    make_observations,
    normalize_kind,
)
from .gp import Grid, KernelSpec
from .mcmc import DivergenceWarning, HmcRun, hmc_sample, summarize
from .neural import ModelFileError
from .svg import line_plot


class UsageError(Exception):
    """Bad invocation: reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _int_list(text):
    try:
        vals = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return vals


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (default 0)")
    parser.add_argument("--out", default=d(None), help="output directory (default: current directory)")
    parser.add_argument("--config", default=d(None), help="JSON config; flags override its fields")
    parser.add_argument("--paper-scale", action="store_true", default=d(False),
                        help="use the published sizes instead of desk-scale defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="priorcvae", description="Encode hyperparameter-conditioned priors and reuse them in HMC.")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    presets = ", ".join(PRESET_NAMES)

    g = sub.add_parser("generate", parents=[common], help="draw a training dataset and observations")
    g.add_argument("--preset", help=f"one of: {presets}")
    g.add_argument("--count", type=_nonneg_int, help="number of prior draws")

    t = sub.add_parser("train", parents=[common], help="fit a (C)VAE to a dataset")
    t.add_argument("--data", required=False, help="dataset CSV (from generate)")
    t.add_argument("--preset", help="take architecture/training defaults from a preset")
    t.add_argument("--unconditional", action="store_true", help="drop conditions (plain VAE baseline)")
    t.add_argument("--hidden", type=_int_list, help="hidden sizes, e.g. 60 or 1000,500,100")
    t.add_argument("--latent-dim", type=_positive_int)
    t.add_argument("--sigma2-vae", type=float)
    t.add_argument("--hidden-activation", choices=("leaky_relu", "sigmoid", "identity"))
    t.add_argument("--output-activation", choices=("leaky_relu", "sigmoid", "identity"))
    t.add_argument("--epochs", type=_positive_int)
    t.add_argument("--batch-size", type=_positive_int)
    t.add_argument("--lr", type=float)
    t.add_argument("--heldout", type=float, default=0.1, help="held-out fraction (default 0.1)")

    i = sub.add_parser("infer", parents=[common], help="HMC with an exact GP or a trained decoder as prior")
    i.add_argument("--preset", help=f"one of: {presets}")
    i.add_argument("--kind", default="priorcvae",
                   help=f"one of: {', '.join(INFER_KINDS)} (aliases: {', '.join(KIND_ALIASES)})")
    i.add_argument("--model", help="trained model (not needed for gp-exact)")
    i.add_argument("--data", help="observation CSV; synthesized from the preset when omitted")
    i.add_argument("--warmup", type=_positive_int)
    i.add_argument("--samples", type=_positive_int)
    i.add_argument("--chains", type=_positive_int)
    i.add_argument("--leapfrog-steps", type=_positive_int)
    i.add_argument("--target-accept", type=float)

    d = sub.add_parser("decode", parents=[common], help="decode prior draws at given conditions")
    d.add_argument("--model", required=False)
    d.add_argument("--condition", type=_float_list, action="append", default=[],
                   help="condition value(s), comma-separated; repeat for several conditions")
    d.add_argument("--count", type=_nonneg_int, default=10)
    d.add_argument("--svg", action="store_true", help="also write decoded.svg")
    d.add_argument("--preset", help="grid for the SVG x axis")

    c = sub.add_parser("compare", parents=[common], help="tabulate time, ESS and ESS/s across runs")
    c.add_argument("runs", nargs="*", help="run directories, optionally NAME=DIR")
    c.add_argument("--decoded", action="append", default=[],
                   help="priorcvae=FILE or priorvae=FILE decoded draws for the Frobenius table")
    c.add_argument("--preset", help="kernel and grid for the Frobenius table")
    c.add_argument("--kernel", choices=("rbf", "matern12", "matern52"), help="analytic kernel family")
    c.add_argument("--grid-n", type=_positive_int, help="regular grid size on [0, 1]")
    return parser


# --------------------------------------------------------------------------- helpers


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(args) -> dict:
    if not args.config:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def _seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int):
        raise UsageError("config field 'seed' must be an integer")
    return seed


def _preset(args, cfg, required=True):
    name = getattr(args, "preset", None) or cfg.get("preset")
    if name is None:
        if required:
            raise UsageError("--preset is required (or set 'preset' in the config file)")
        return None
    paper = bool(args.paper_scale or cfg.get("paper_scale", False))
    return apply_overrides(get_preset(name, paper), cfg)


def _echo(out: Path, resolved: dict) -> None:
    text = json.dumps(resolved, indent=2, default=_jsonable)
    (out / "config.json").write_text(text + "\n")
    print(f"resolved config -> {out / 'config.json'}")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer, np.floating)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"not serializable: {type(v).__name__}")


def _progress(total):
    every = max(1, total // 10)

    def log(epoch, train_loss, heldout):
        if epoch % every == 0 or epoch == total:
            print(f"  epoch {epoch:>5}/{total}  train {train_loss:.4f}  heldout {heldout:.4f}", file=sys.stderr)

    return log


# --------------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    preset = _preset(args, cfg)
    seed = _seed(args, cfg)
    count = args.count if args.count is not None else preset.count
    if count < 1:
        raise UsageError("--count must be >= 1")
    out = _out_dir(args)
    _echo(out, {"command": "generate", "seed": seed, "count": count, "preset": preset.to_dict()})
    data = generate_dataset(preset, count, seed)
    write_dataset(data, out / "dataset.csv")
    obs = make_observations(preset, seed)
    obs.save(out / "observations.csv")
    print(f"dataset: {data.count} rows x {data.k + data.n} columns ({data.k} condition + {data.n} values), "
          f"seed {seed} -> {out / 'dataset.csv'}")
    print(f"observations: {len(obs.rows)} rows -> {out / 'observations.csv'}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    preset = _preset(args, cfg, required=False)
    seed = _seed(args, cfg)
    data_path = args.data or cfg.get("data")
    if not data_path:
        raise UsageError("--data is required")
    if not Path(data_path).exists():
        raise UsageError(f"dataset not found: {data_path}")
    if not 0.0 <= args.heldout < 1.0:
        raise UsageError("--heldout must lie in [0, 1)")
    net = preset.net if preset else NetConfig()
    tcfg = preset.train if preset else TrainConfig(epochs=50, batch_size=500)
    net_over = {k: v for k, v in {
        "hidden": args.hidden, "latent_dim": args.latent_dim, "sigma2_vae": args.sigma2_vae,
        "hidden_activation": args.hidden_activation, "output_activation": args.output_activation,
    }.items() if v is not None}
    train_over = {k: v for k, v in {
        "epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
    }.items() if v is not None}
    try:
        net = replace(net, **net_over)
        tcfg = replace(tcfg, seed=seed, **train_over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    data = read_dataset(data_path)
    if args.unconditional:
        data = data.without_conditions()
    if preset is not None:
        want_k = 0 if args.unconditional else preset.condition_dim
        if data.n != preset.grid.n or data.k != want_k:
            raise UsageError(
                f"dataset has {data.k} condition + {data.n} value columns; preset {preset.name} expects "
                f"{want_k} + {preset.grid.n}"
            )
    if data.count < 1:
        raise UsageError(f"{data_path}: no rows")
    n_held = int(round(args.heldout * data.count)) if data.count >= 10 else 0
    fit, held = data.split(data.count - n_held)
    model = build_cvae(data.n, data.k, net.hidden, net.latent_dim, net.sigma2_vae, seed=seed,
                       hidden_activation=net.hidden_activation, output_activation=net.output_activation)
    if preset is not None:
        model.metadata["preset"] = preset.name
    out = _out_dir(args)
    _echo(out, {"command": "train", "seed": seed, "data": str(data_path), "unconditional": args.unconditional,
                "heldout_rows": n_held, "net": asdict(net), "train": asdict(tcfg),
                "preset": preset.name if preset else None})
    print(f"training {'VAE' if data.k == 0 else 'CVAE'}: {model.encoder.layer_sizes} -> latent "
          f"{model.latent_dim} -> {model.decoder.layer_sizes}, {fit.count} train / {held.count} held-out rows")
    model, history = train(model, tcfg, fit, held if held.count else None, log=_progress(tcfg.epochs))
    save_model(model, out / "model.json", loss_history_path=out / "loss.csv")
    history.to_csv(out / "loss.csv")
    print(f"final train loss {history.train_loss[-1]:.4f}; model -> {out / 'model.json'}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    preset = _preset(args, cfg)
    seed = _seed(args, cfg)
    try:
        kind = normalize_kind(args.kind)
    except PresetError as exc:
        raise UsageError(str(exc)) from None
    hmc_over = {k: v for k, v in {
        "warmup": args.warmup, "samples": args.samples, "chains": args.chains,
        "leapfrog_steps": args.leapfrog_steps, "target_accept": args.target_accept,
    }.items() if v is not None}
    try:
        hmc = replace(preset.hmc, seed=seed, **hmc_over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = None
    model_path = args.model or cfg.get("model")
    if kind != "gp-exact":
        if not model_path:
            raise UsageError(f"--model is required for kind {kind}")
        model = load_model(model_path)
    out = _out_dir(args)
    if args.data:
        obs = Observations.load(args.data)
    else:
        obs = make_observations(preset, seed)
        obs.save(out / "observations.csv")
    _echo(out, {"command": "infer", "seed": seed, "kind": kind, "model": model_path, "data": args.data,
                "hmc": asdict(hmc), "preset": preset.to_dict()})
    post = build_posterior(preset, kind, obs, model)
    print(f"HMC on {kind} posterior: {post.dim} unconstrained dimensions, "
          f"{hmc.chains} chains x ({hmc.warmup} warmup + {hmc.samples} draws)")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DivergenceWarning)
        run = hmc_sample(post, hmc)
    for w in caught:
        if issubclass(w.category, DivergenceWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    run.save(out)
    rows = [r for r in summarize(run) if not r["param"].startswith("z[")]
    print(format_table(rows, ["param", "mean", "sd", "q05", "q95", "ess", "rhat", "ess_per_s"]))
    print(f"wall time {run.wall_seconds:.1f} s; divergences {run.divergences.tolist()}; run -> {out}")
    return 0


def cmd_decode(args) -> int:
    cfg = _load_config(args)
    seed = _seed(args, cfg)
    model_path = args.model or cfg.get("model")
    if not model_path:
        raise UsageError("--model is required")
    model = load_model(model_path)
    conds = args.condition
    if model.condition_dim == 0:
        if conds:
            raise UsageError("this model is unconditional; drop --condition")
        conds = [()]
    elif not conds:
        raise UsageError(f"--condition is required ({model.condition_dim} value(s) per condition)")
    for c in conds:
        if len(c) != model.condition_dim:
            raise UsageError(f"condition {','.join(map(str, c))} has {len(c)} value(s); model expects "
                             f"{model.condition_dim}")
    out = _out_dir(args)
    _echo(out, {"command": "decode", "seed": seed, "model": str(model_path), "count": args.count,
                "conditions": [list(c) for c in conds]})
    parts = []
    for c in conds:
        draws = sample_prior(model, np.array(c, dtype=float), args.count, seed) if args.count else np.zeros((0, model.n))
        parts.append(PriorDataset(np.tile(np.array(c, dtype=float), (len(draws), 1)).reshape(len(draws), len(c)),
                                  draws.reshape(len(draws), model.n)))
    data = PriorDataset.concat(parts) if parts else PriorDataset(np.zeros((0, 0)), np.zeros((0, model.n)))
    write_dataset(data, out / "decoded.csv")
    print(f"decoded {args.count} draw(s) at {len(conds)} condition(s) -> {out / 'decoded.csv'}")
    if args.svg:
        preset = _preset(args, cfg, required=False)
        if preset is not None and preset.grid.n == model.n and preset.grid.dim == 1:
            x = preset.grid.points[:, 0]
        else:
            x = np.arange(model.n, dtype=float)
        groups = {(",".join(f"{v:g}" for v in c) or "prior"): p.draws for c, p in zip(conds, parts)}
        line_plot(x, groups, out / "decoded.svg", title="decoded prior draws")
        print(f"plot -> {out / 'decoded.svg'}")
    return 0


def _named_paths(items, what):
    named = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item.rstrip("/")).name or item, item
        if name in named:
            raise UsageError(f"duplicate {what} name {name!r}; use NAME=PATH")
        named[name] = path
    return named


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    runs_in = args.runs or cfg.get("runs", [])
    decoded = _named_paths(args.decoded, "decoded")
    if not runs_in and not decoded:
        raise UsageError("give at least one run directory (or --decoded files)")
    out = _out_dir(args)
    _echo(out, {"command": "compare", "runs": runs_in, "decoded": decoded, "preset": args.preset,
                "kernel": args.kernel, "grid_n": args.grid_n})
    if runs_in:
        runs = {}
        for name, path in _named_paths(runs_in, "run").items():
            if not Path(path).is_dir():
                raise UsageError(f"run directory not found: {path}")
            runs[name] = HmcRun.load(path)
        rows, measure = comparison_rows(runs)
        write_rows(rows, COMPARISON_FIELDS, out / "comparison.csv")
        write_rows(parameter_rows(runs), ["param", *runs], out / "parameters.csv")
        print(f"ESS measure: {measure}")
        print(format_table(rows, COMPARISON_FIELDS))
    if decoded:
        unknown = set(decoded) - {"priorcvae", "priorvae"}
        if unknown:
            raise UsageError(f"--decoded names must be priorcvae or priorvae, got {', '.join(sorted(unknown))}")
        if "priorcvae" not in decoded:
            raise UsageError("the Frobenius table needs --decoded priorcvae=FILE")
        preset = _preset(args, cfg, required=False)
        if args.kernel:
            kernel = KernelSpec(args.kernel, 0.5)
        elif preset is not None and preset.kernel is not None:
            kernel = preset.kernel
        else:
            raise UsageError("the Frobenius table needs --kernel or a GP --preset")
        cvae = read_dataset(decoded["priorcvae"])
        grid = Grid.regular(args.grid_n) if args.grid_n else (preset.grid if preset else Grid.regular(cvae.n))
        if grid.n != cvae.n:
            raise UsageError(f"decoded draws have {cvae.n} values but the grid has {grid.n} points")
        vae = read_dataset(decoded["priorvae"]) if "priorvae" in decoded else None
        if vae is not None and vae.n != cvae.n:
            raise UsageError("priorvae and priorcvae draws differ in length")
        frob = frobenius_rows(kernel, grid, cvae, vae)
        write_rows(frob, FROBENIUS_FIELDS, out / "frobenius.csv")
        print(format_table(frob, FROBENIUS_FIELDS))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "infer": cmd_infer, "decode": cmd_decode,
            "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return COMMANDS[args.command](args)
    except (UsageError, PresetError, ModelFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # malformed input files and shape mismatches
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, never traceback at the user
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
