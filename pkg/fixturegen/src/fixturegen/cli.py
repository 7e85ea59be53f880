"""CLI: train a fixture bundle and write it to a directory.

    fixturegen --width 10 --layers 2 --seed 0 --out fixtures/fc_10x2
"""

import argparse

from .train import train_export


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="fixturegen", description=__doc__)
    p.add_argument("--width", type=int, default=10, help="hidden layer width")
    p.add_argument("--layers", type=int, default=2, help="number of hidden layers")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l1", type=float, default=1e-4, help="L1 penalty strength")
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--out", required=True, help="output directory")
    args = p.parse_args(argv)
    bundle = train_export(
        args.width, args.layers, seed=args.seed, l1=args.l1, epochs=args.epochs
    )
    bundle.write(args.out)
    md = bundle.metadata
    print(
        f"{md['name']}: train_acc={md['train_accuracy']:.3f} "
        f"test_acc={md['test_accuracy']:.3f} -> {args.out}"
    )
    return 0


def entry() -> None:
    raise SystemExit(main())
