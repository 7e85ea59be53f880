"""Command-line interface.

Subcommands:

* ``explain``  — compute an explanation, write its JSON document, and
  optionally render the partition as a grayscale heatmap PNG.
* ``verify``   — run one robustness query; the exit code encodes the
  outcome (0 verified, 1 counterexample, 4 unknown).
* ``traverse`` — print the feature permutation and scores as JSON.

Exit code 2 flags a configuration error, 3 a model/input error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bab import RobustnessQuery, Status
from .bounds import BoundMethod
from .errors import FavexError
from .explain import (
    BabVerifier,
    Mode,
    TraversalStrategy,
    binary_search_explain,
    favex,
    sequential_explain,
    traversal_order,
    traversal_scores,
)
from .model import load_input_vector, load_model, predict

EXIT_OK = 0
EXIT_COUNTEREXAMPLE = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_UNKNOWN = 4

HEATMAP_INVARIANT = 0
HEATMAP_UNKNOWN = 128
HEATMAP_COUNTERFACTUAL = 255


class _ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="favex", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, input_required=True):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument(
            "--input",
            required=input_required,
            help="input vector (JSON array or single-row CSV)",
        )
        sp.add_argument("--epsilon", type=float, required=True, help="perturbation radius")
        sp.add_argument("--timeout", type=float, default=60.0, help="per-query timeout in seconds")
        sp.add_argument("--seed", type=int, default=0, help="attack RNG seed")

    e = sub.add_parser("explain", help="compute an explanation")
    common(e, input_required=False)
    e.add_argument(
        "--input-dir",
        help="explain every *.json/*.csv input in a directory "
        "(writes one document per input into --out)",
    )
    e.add_argument("--mode", choices=[m.value for m in Mode], default=Mode.V_OPTIMAL.value)
    e.add_argument(
        "--strategy", choices=["favex", "sequential", "binary-search"], default="favex"
    )
    e.add_argument(
        "--traversal",
        choices=[t.value for t in TraversalStrategy],
        default=TraversalStrategy.FAVEX_IBP.value,
    )
    e.add_argument("--leaf-limit", type=int, default=500, help="max cached leaves to inherit")
    e.add_argument("--out", help="output JSON path (default stdout)")
    e.add_argument("--heatmap", help="grayscale partition PNG path")
    e.add_argument("--shape", help="heatmap shape HxW (requires H*W = input dim)")

    v = sub.add_parser("verify", help="run a single robustness query")
    common(v)
    v.add_argument(
        "--active",
        default="all",
        help='perturbable features: "all", "none", or comma-separated indices',
    )

    t = sub.add_parser("traverse", help="print traversal order and scores")
    common(t)
    t.add_argument(
        "--traversal",
        choices=[t.value for t in TraversalStrategy],
        default=TraversalStrategy.FAVEX_IBP.value,
    )
    return p


def _positive(value: float, flag: str) -> float:
    if value <= 0:
        raise _ConfigError(f"{flag} must be strictly positive")
    return value


def _parse_shape(text: str, d: int) -> tuple[int, int]:
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError as exc:
        raise _ConfigError("--shape must look like HxW") from exc
    if h <= 0 or w <= 0 or h * w != d:
        raise _ConfigError(f"--shape {h}x{w} does not match input dim {d}")
    return h, w


def _parse_active(text: str, d: int) -> frozenset[int]:
    text = text.strip().lower()
    if text == "all":
        return frozenset(range(d))
    if text in ("", "none", "[]"):
        return frozenset()
    try:
        idx = [int(t) for t in text.replace("[", "").replace("]", "").split(",") if t.strip()]
    except ValueError as exc:
        raise _ConfigError(f"--active: cannot parse {text!r}") from exc
    if any(i < 0 or i >= d for i in idx):
        raise _ConfigError("--active index out of range")
    return frozenset(idx)


def _write_heatmap(path, shape, explanation):
    from PIL import Image

    h, w = shape
    img = np.full(h * w, HEATMAP_INVARIANT, dtype=np.uint8)
    img[sorted(explanation.unknowns)] = HEATMAP_UNKNOWN
    img[sorted(explanation.counterfactuals)] = HEATMAP_COUNTERFACTUAL
    Image.fromarray(img.reshape(h, w), mode="L").save(path)


def _explain_one(net, x, args, out_path, shape) -> None:
    order = traversal_order(net, x, args.epsilon, TraversalStrategy(args.traversal))
    oracle = BabVerifier(net, method=BoundMethod.LINEAR_RELAXATION, seed=args.seed)
    mode = Mode(args.mode)
    if args.strategy == "favex":
        result = favex(net, x, args.epsilon, mode, order, args.timeout,
                       leaf_limit=args.leaf_limit, oracle=oracle)
    elif args.strategy == "sequential":
        result = sequential_explain(net, x, args.epsilon, mode, order, args.timeout, oracle=oracle)
    else:
        result = binary_search_explain(net, x, args.epsilon, mode, order, args.timeout, oracle=oracle)

    doc = json.dumps(result.to_json_dict(), indent=2, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(doc)
    else:
        sys.stdout.write(doc)
    if args.heatmap:
        _write_heatmap(args.heatmap, shape, result)
    print(
        f"|C|={len(result.counterfactuals)} |U|={len(result.unknowns)} "
        f"|R|={len(result.invariants)} time={result.stats.total_time:.2f}s "
        f"queries={result.stats.queries}",
        file=sys.stderr,
    )


def cmd_explain(args) -> int:
    import pathlib

    _positive(args.epsilon, "--epsilon")
    _positive(args.timeout, "--timeout")
    if args.leaf_limit < 0:
        raise _ConfigError("--leaf-limit must be non-negative")
    if bool(args.input) == bool(args.input_dir):
        raise _ConfigError("give exactly one of --input or --input-dir")
    try:
        net = load_model(args.model)
    except FavexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    shape = _parse_shape(args.shape, net.input_dim) if args.shape else None
    if args.heatmap and shape is None:
        raise _ConfigError("--heatmap requires --shape HxW")
    if args.heatmap and args.input_dir:
        raise _ConfigError("--heatmap only applies to a single --input")

    if args.input_dir:
        if not args.out:
            raise _ConfigError("--input-dir requires --out (a directory)")
        src = pathlib.Path(args.input_dir)
        paths = sorted(p for p in src.iterdir() if p.suffix in (".json", ".csv"))
        if not paths:
            raise _ConfigError(f"no *.json/*.csv inputs under {src}")
        out_dir = pathlib.Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in paths:
            try:
                x = load_input_vector(p, net.input_dim)
            except FavexError as exc:
                print(f"error: {p}: {exc}", file=sys.stderr)
                return EXIT_MODEL
            _explain_one(net, x, args, out_dir / f"{p.stem}.explanation.json", shape)
        return EXIT_OK

    try:
        x = load_input_vector(args.input, net.input_dim)
    except FavexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    _explain_one(net, x, args, args.out, shape)
    return EXIT_OK


def cmd_verify(args) -> int:
    _positive(args.epsilon, "--epsilon")
    _positive(args.timeout, "--timeout")
    try:
        net = load_model(args.model)
        x = load_input_vector(args.input, net.input_dim)
    except FavexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    active = _parse_active(args.active, net.input_dim)
    oracle = BabVerifier(net, seed=args.seed)
    query = RobustnessQuery.from_input(net, x, active, args.epsilon)
    verdict = oracle(query, args.timeout)
    if verdict.status is Status.VERIFIED:
        print("verified")
        return EXIT_OK
    if verdict.status is Status.COUNTEREXAMPLE:
        print("counterexample")
        print(json.dumps({"witness": verdict.witness.tolist(),
                          "predicted": predict(net, verdict.witness)}))
        return EXIT_COUNTEREXAMPLE
    print("unknown")
    return EXIT_UNKNOWN


def cmd_traverse(args) -> int:
    _positive(args.epsilon, "--epsilon")
    try:
        net = load_model(args.model)
        x = load_input_vector(args.input, net.input_dim)
    except FavexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    strategy = TraversalStrategy(args.traversal)
    scores = traversal_scores(net, x, args.epsilon, strategy)
    order = traversal_order(net, x, args.epsilon, strategy)
    print(json.dumps({"order": list(order), "scores": scores.tolist()}, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        if args.command == "explain":
            return cmd_explain(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_traverse(args)
    except _ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FavexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


def entry() -> None:
    raise SystemExit(main())
