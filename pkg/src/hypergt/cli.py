"""Command-line front end: ``generate``, ``train``, ``ablate`` and ``gradcheck``.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from functools import partial
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import numerics as nx
from .data import Dataset, generate_planted, load_dataset_dir, save_dataset
from .hypergraph import Hypergraph
from .losses import classification_loss, structure_loss
from .model import HyperGTConfig
from .training import MODEL_KINDS, HyperGTModel, TrainConfig, multi_seed_run

# key -> (type, default); ``data`` and ``synthetic`` name the dataset source
CONFIG_KEYS = {
    "lr": (float, 1e-3),
    "weight_decay": (float, 1e-4),
    "epochs": (int, 300),
    "patience": (int, 50),
    "lambda": (float, 1.0),
    "d": (int, 64),
    "layers": (int, 2),
    "heads": (int, 4),
    "ffn_hidden": (int, None),
    "dropout": (float, 0.1),
    "use_node_pe": ("bool", True),
    "use_edge_pe": ("bool", True),
    "model": (str, "hypergt"),
    "seeds": ("seeds", [0]),
    "data": (str, None),
    "synthetic": ("bool", False),
    "n": (int, 300),
    "m": (int, 320),
    "c": (int, 2),
    "d_in": (int, 100),
    "mean_scale": (float, 0.0),
    "feature_std": (float, 1.0),
    "p_inter": (float, 0.05),
}

ABLATION_ROWS = (
    ("no PE", False, False, False),
    ("node PE", True, False, False),
    ("node+edge PE", True, True, False),
    ("node+edge PE+reg", True, True, True),
)


class UsageError(Exception):
    pass


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0,2,5"`` or an inclusive range ``"0..9"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}") from None


def _parse_bool(text: str) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _coerce(key: str, raw):
    kind = CONFIG_KEYS[key][0]
    if kind == "bool":
        return raw if isinstance(raw, bool) else _parse_bool(raw)
    if kind == "seeds":
        return raw if isinstance(raw, list) else parse_seeds(raw)
    try:
        return kind(raw)
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None


def read_config_file(path) -> dict:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        cfg.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        if key in vars(args):
            cfg[key] = _coerce(key, vars(args)[key])
    if cfg["model"] not in MODEL_KINDS:
        raise UsageError(f"model must be one of {MODEL_KINDS}")
    if not cfg["seeds"]:
        raise UsageError("no seeds given")
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    try:
        model = HyperGTConfig(
            d=cfg["d"],
            layers=cfg["layers"],
            heads=cfg["heads"],
            ffn_hidden=cfg["ffn_hidden"],
            c=cfg["c"],
            use_node_pe=cfg["use_node_pe"],
            use_edge_pe=cfg["use_edge_pe"],
            dropout_rate=cfg["dropout"],
        )
        return TrainConfig(
            lr=cfg["lr"],
            weight_decay=cfg["weight_decay"],
            epochs=cfg["epochs"],
            patience=cfg["patience"],
            lam=cfg["lambda"],
            model=model,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def dataset_source(cfg: dict):
    """A fixed ``Dataset`` or a picklable ``seed -> Dataset`` generator."""
    if cfg["data"] and cfg["synthetic"]:
        raise UsageError("give either --data or --synthetic, not both")
    if cfg["data"]:
        path = Path(cfg["data"])
        if not path.is_dir():
            raise UsageError(f"dataset directory not found: {path}")
        return load_dataset_dir(path, c=cfg["c"])
    if cfg["synthetic"]:
        if cfg["c"] < 2:
            raise UsageError("c must be at least 2")
        return partial(
            _planted,
            n=cfg["n"],
            m=cfg["m"],
            c=cfg["c"],
            mean_scale=cfg["mean_scale"],
            feature_std=cfg["feature_std"],
            p_inter=cfg["p_inter"],
            d_in=cfg["d_in"],
        )
    raise UsageError("a dataset source is required: --data DIR or --synthetic")


def _planted(seed, **kwargs) -> Dataset:
    return generate_planted(seed=seed, **kwargs)


def _threads() -> int:
    raw = os.environ.get("HYPERGT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"HYPERGT_THREADS must be an integer, got {raw!r}") from None


def _emit(payload: dict, output: str | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    sys.stdout.write(text)
    if output:
        Path(output).write_text(text)


def _dataset_echo(cfg: dict) -> dict:
    keys = ("data",) if cfg["data"] else ("n", "m", "c", "d_in", "mean_scale", "feature_std", "p_inter")
    return {k: cfg[k] for k in keys}


# --------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.c < 2:
        raise UsageError("c must be at least 2")
    if args.n < 2 * args.c:
        raise UsageError("need at least 2 nodes per community (n >= 2c)")
    if args.m < 1:
        raise UsageError("m must be at least 1")
    params = {
        "n": args.n,
        "m": args.m,
        "c": args.c,
        "mean_scale": args.mean_scale,
        "feature_std": args.feature_std,
        "p_inter": args.p_inter,
        "d_in": args.d_in,
        "seed": args.seed,
    }
    ds = generate_planted(**params)
    paths = save_dataset(ds, args.out)
    manifest = {"generator": "planted", **params, "files": {k: p.name for k, p in paths.items()}}
    (Path(args.out) / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {', '.join(str(p) for p in paths.values())} and manifest.json")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    config = train_config(cfg)
    source = dataset_source(cfg)
    result = multi_seed_run(source, config, cfg["seeds"], kind=cfg["model"], workers=_threads())
    payload = {
        "config": {**result.config, "seeds": result.seeds, "dataset": _dataset_echo(cfg)},
        "per_seed_test_acc": result.per_seed_test_acc,
        "mean": result.mean,
        "std": result.std,
        "std_kind": "population",
        "l_c_final": result.l_c_final,
        "l_s_final": result.l_s_final,
        "wall_time": None if args.no_wall_time else result.wall_time,
    }
    _emit(payload, args.output)
    return 0


def run_ablation(source, config: TrainConfig, seeds, workers: int = 1) -> list[dict]:
    rows = []
    for label, node_pe, edge_pe, reg in ABLATION_ROWS:
        cfg = replace(
            config,
            lam=config.lam if reg else 0.0,
            model=replace(config.model, use_node_pe=node_pe, use_edge_pe=edge_pe),
        )
        res = multi_seed_run(source, cfg, seeds, workers=workers)
        rows.append(
            {
                "row": label,
                "node_pe": node_pe,
                "edge_pe": edge_pe,
                "structure_reg": reg,
                "per_seed_test_acc": res.per_seed_test_acc,
                "mean": res.mean,
                "std": res.std,
            }
        )
    return rows


def format_ablation(rows: list[dict]) -> str:
    mark = lambda flag: "x" if flag else "-"  # noqa: E731
    lines = [f"{'configuration':<18} {'node PE':>7} {'edge PE':>7} {'reg':>4}   accuracy (mean ± pop. std)"]
    for r in rows:
        lines.append(
            f"{r['row']:<18} {mark(r['node_pe']):>7} {mark(r['edge_pe']):>7} {mark(r['structure_reg']):>4}"
            f"   {100 * r['mean']:6.2f} ± {100 * r['std']:5.2f}"
        )
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    if cfg["model"] != "hypergt":
        raise UsageError("ablate only applies to the hypergt model")
    config = train_config(cfg)
    rows = run_ablation(dataset_source(cfg), config, cfg["seeds"], workers=_threads())
    print(format_ablation(rows))
    if args.output:
        payload = {"config": {**train_config_echo(config), "seeds": cfg["seeds"],
                              "dataset": _dataset_echo(cfg)}, "rows": rows}
        Path(args.output).write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def train_config_echo(config: TrainConfig) -> dict:
    from .training import config_echo

    return config_echo(config, "hypergt")


def gradcheck_toy(seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """The 6-node / 3-hyperedge instance used by ``gradcheck``."""
    hg = Hypergraph.from_hyperedges(6, [[0, 1, 2], [2, 3], [3, 4, 5]])
    rng = np.random.default_rng(seed)
    X_V = rng.uniform(-1.0, 1.0, size=(6, 3))
    labels = np.array([0, 0, 0, 1, 1, 1])
    return Dataset(hg=hg, X_V=X_V, labels=labels, c=2), np.array([0, 1, 3, 4])


def run_gradcheck(eps: float = 1e-5, lam: float = 1.0, seed: int = 0) -> tuple[float, dict]:
    ds, labeled = gradcheck_toy(seed)
    config = HyperGTConfig(d=4, layers=2, heads=2, c=2, dropout_rate=0.0)
    model = HyperGTModel(ds, config, seed)

    def loss_fn():
        trace = model(train_mode=False)
        l_c = classification_loss(trace.logits, ds.labels, labeled)
        return nx.add(l_c, nx.scale(structure_loss(model.structure, trace.attn), lam))

    report: dict = {}
    worst = nx.finite_diff_gradcheck(loss_fn, model.parameters(), eps=eps, report=report)
    return worst, report


def cmd_gradcheck(args) -> int:
    worst, report = run_gradcheck(args.eps, args.lam, args.seed)
    name = max(report, key=report.get)
    print(f"parameters checked: {len(report)}")
    for pname, err in report.items():
        print(f"  {pname:<16} {err:.3e}")
    print(f"worst parameter: {name} ({report[name]:.3e})")
    print(f"max relative error: {worst:.3e} (tolerance {args.tol:g})")
    ok = worst < args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", default=S, help="directory written by 'generate'")
    p.add_argument("--synthetic", action="store_true", default=S,
                   help="regenerate a planted dataset for every seed")
    p.add_argument("--seeds", default=S, help="'0..9', '0,1,2' or a single seed")
    p.add_argument("--seed", dest="seeds", default=S, help="alias for a single --seeds value")
    p.add_argument("--model", default=S, choices=MODEL_KINDS)
    for key in ("lr", "weight_decay", "epochs", "patience", "d", "layers", "heads", "ffn_hidden",
                "dropout", "n", "m", "c", "d_in", "mean_scale", "feature_std", "p_inter"):
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=S, metavar="X")
    p.add_argument("--lambda", dest="lambda", default=S, metavar="X", help="structure-loss weight")
    p.add_argument("--use-node-pe", dest="use_node_pe", default=S, metavar="BOOL")
    p.add_argument("--use-edge-pe", dest="use_edge_pe", default=S, metavar="BOOL")
    p.add_argument("--output", help="also write JSON to this path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypergt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a planted-community dataset")
    g.add_argument("--n", type=int, default=300)
    g.add_argument("--m", type=int, default=320)
    g.add_argument("--c", type=int, default=2)
    g.add_argument("--d-in", type=int, default=100)
    g.add_argument("--mean-scale", type=float, default=0.0)
    g.add_argument("--feature-std", type=float, default=1.0)
    g.add_argument("--p-inter", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="multi-seed training, metrics JSON on stdout")
    _add_experiment_flags(t)
    t.add_argument("--no-wall-time", action="store_true",
                   help="report wall_time as null so repeated runs are byte-identical")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="the four PE / regulariser configurations")
    _add_experiment_flags(a)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check on the 6-node toy")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--lambda", dest="lam", type=float, default=1.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with threadpool_limits(limits=1):
            return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except Exception as exc:  # noqa: BLE001
        print(f"hypergt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
