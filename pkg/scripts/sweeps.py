"""Embedding-size and data-fraction sweeps on an existing run directory (see run_pipeline.py)."""

import argparse

from impsim.harness import pipeline as P
from impsim.harness.config import load_config
from impsim.harness.manifest import load_manifest


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--out", required=True, help="run directory; missing upstream stages are computed")
    ap.add_argument("--config")
    ap.add_argument("--dims", type=int, nargs="*", help="default: config sweep_dims; pass none to skip")
    ap.add_argument("--fractions", type=float, nargs="*", help="default: config sweep_fractions")
    ap.add_argument("--set", dest="overrides", action="append", default=[])
    args = ap.parse_args(argv)

    manifest = load_manifest(args.manifest)
    cfg = load_config(args.config, args.overrides, out_dir=args.out)
    P.ensure_upstream(manifest, cfg, "ground")
    if args.dims is None or args.dims:
        rep = P.cmd_sweep_dim(manifest, cfg, args.dims)
        for r in rep["result"]["rows"]:
            print(f"dim {r['embedding_dim']:>5}: macro F1 {r['macro_f1_mean']:.4f} +- {r['macro_f1_std']:.4f}")
    if args.fractions is None or args.fractions:
        rep = P.cmd_sweep_frac(manifest, cfg, args.fractions)
        for r in rep["result"]["rows"]:
            print(f"{r['mode']:<14} @ {r['fraction']:.2f}: macro F1 {r['macro_f1_mean']:.4f}")


if __name__ == "__main__":
    main()
