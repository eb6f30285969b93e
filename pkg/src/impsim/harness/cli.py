"""``impsim`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from ..downstream import PolicyMode
from . import pipeline as P
from .checks import format_table, gradcheck_table
from .config import config_from_dict, load_config, save_config
from .manifest import ManifestError, load_manifest
from .synth import GENERATORS, SyntheticSpec, SynthError, synth_generate

log = logging.getLogger("impsim")

STAGE_COMMANDS = ("simulate", "ground", "pretrain", "finetune", "eval", "sweep-dim", "sweep-frac")


def _common(p: argparse.ArgumentParser, manifest: bool = True) -> None:
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, help="pipeline seed (overrides config and IMPSIM_SEED)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. finetune_schedule.max_epochs=50 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impsim", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--generator", choices=GENERATORS, default="articulated_arm")
    s.add_argument("--users", type=int, default=4)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--frames", type=int, default=SyntheticSpec.frames)
    s.add_argument("--noise", type=float, default=SyntheticSpec.noise)
    s.add_argument("--seed", type=int, default=SyntheticSpec.seed)
    s.add_argument("--write-meshes", action="store_true", help="also write OBJ frames per labelled recording")

    for name, helptext in (("simulate", "geodesic + relaxation path lengths per recording"),
                           ("ground", "fit the grounding model and generate simulated impedance"),
                           ("pretrain", "contrastive pretraining of the impedance encoder"),
                           ("finetune", "train one classifier on all users"),
                           ("eval", "leave-one-user-out evaluation"),
                           ("sweep-dim", "embedding-size sweep"),
                           ("sweep-frac", "training-data fraction sweep")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name in ("finetune", "eval"):
            p.add_argument("--mode", choices=[m.value for m in PolicyMode])
        if name == "sweep-dim":
            p.add_argument("--dims", type=int, nargs="+")
        if name == "sweep-frac":
            p.add_argument("--fractions", type=float, nargs="+")

    g = sub.add_parser("gradcheck", help="finite-difference gradient table")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt", help="perturb one row's analytic gradient (negative control)")
    g.add_argument("--json", action="store_true")

    r = sub.add_parser("reproduce", help="replay a report and compare its digest")
    r.add_argument("report")
    r.add_argument("--out", help="replay directory (default: a temporary directory)")

    c = sub.add_parser("config", help="print the effective config as JSON")
    _common(c, manifest=False)
    return ap


def _cfg(args):
    return load_config(args.config, args.overrides, seed=args.seed, out_dir=args.out)


def run_stage(command: str, manifest, cfg, mode=None, dims=None, fractions=None, auto: bool = False) -> dict:
    if auto:
        through = {"simulate": None, "ground": "sim", "pretrain": "ground", "finetune": "ground", "eval": "ground",
                   "sweep-dim": "ground", "sweep-frac": "ground"}[command]
        if through:
            P.ensure_upstream(manifest, cfg, through)
        needs_pretrain = command in ("finetune", "eval") and PolicyMode(mode or cfg.policy.mode) != PolicyMode.NO_PRETRAIN
        if needs_pretrain:
            P.ensure_upstream(manifest, cfg, "pretrain")
    if command == "simulate":
        return P.simulate(manifest, cfg)
    if command == "ground":
        return P.ground(manifest, cfg)
    if command == "pretrain":
        return P.pretrain(manifest, cfg)
    if command == "finetune":
        return P.cmd_finetune(manifest, cfg, mode)
    if command == "eval":
        return P.cmd_eval(manifest, cfg, mode)
    if command == "sweep-dim":
        return P.cmd_sweep_dim(manifest, cfg, dims)
    if command == "sweep-frac":
        return P.cmd_sweep_frac(manifest, cfg, fractions)
    raise ValueError(f"unknown command {command!r}")


def reproduce(report_path, out=None) -> tuple:
    """Replay the command recorded in a report; returns ``(matches, original, replayed)``."""
    rep = P.read_report(report_path)
    if P.report_digest(rep) != rep.get("digest"):
        raise ValueError(f"{report_path}: stored digest does not match the report content")
    command = rep["command"]
    if command == "simp":
        command = "ground"
    prov = rep["provenance"]
    manifest = load_manifest(rep["paths"]["manifest"])
    if manifest.inputs_digest() != prov["inputs_digest"]:
        raise ValueError("dataset inputs changed since the report was written")
    out = Path(out or tempfile.mkdtemp(prefix="impsim-replay-"))
    cfg = config_from_dict({**prov["config"], "out_dir": str(out)})
    kw = {}
    if command in ("finetune", "eval"):
        kw["mode"] = prov.get("mode")
    if command == "sweep-dim":
        kw["dims"] = [r["embedding_dim"] for r in rep["result"]["rows"]]
    if command == "sweep-frac":
        kw["fractions"] = sorted({r["fraction"] for r in rep["result"]["rows"]})
    new = run_stage(command, manifest, cfg, auto=True, **kw)
    if rep["command"] == "simp":
        new = new["simp"]
    new = {k: v for k, v in new.items() if k != "simp"}
    replayed = P.read_report(_report_file(rep, cfg, kw)) if _report_file(rep, cfg, kw) else new
    return replayed["digest"] == rep["digest"], rep, replayed


def _report_file(rep: dict, cfg, kw):
    cmd = rep["command"]
    d = Path(cfg.out_dir)
    if cmd in ("simulate", "ground", "simp", "pretrain"):
        return d / {"simulate": "sim", "ground": "ground", "simp": "simp", "pretrain": "pretrain"}[cmd] / "report.json"
    if cmd == "eval":
        return d / "eval" / f"{kw['mode']}.json"
    if cmd == "finetune":
        return d / "finetune" / f"{kw['mode']}_seed{rep['result']['seed']}.json"
    return d / "sweep" / ("sweep_dim.json" if cmd == "sweep-dim" else "sweep_frac.json")


def _summary(rep: dict) -> str:
    res = rep["result"]
    cmd = rep["command"]
    if cmd == "eval":
        return (f"{res['mode']}: macro F1 {res['macro_f1_mean']:.4f} +- {res['macro_f1_std']:.4f}, "
                f"accuracy {res['accuracy_mean']:.4f} over {res['fold_count']} folds x {len(res['seeds'])} seeds")
    if cmd == "ground":
        return f"grounding R2 val {res['val_r2']['mean']}, test {res.get('test_r2', {}).get('mean')}"
    if cmd == "pretrain":
        return "; ".join(f"seed {r['seed']} dim {r['embedding_dim']}: val top1 {r['val_top1']:.3f}" for r in res["runs"])
    if cmd == "sweep-dim":
        return "\n".join(f"dim {r['embedding_dim']}: F1 {r['macro_f1_mean']:.4f}" for r in res["rows"])
    if cmd == "sweep-frac":
        return "\n".join(f"{r['mode']} @ {r['fraction']}: F1 {r['macro_f1_mean']:.4f}" for r in res["rows"])
    if cmd == "simulate":
        return f"{len(res['recordings'])} recordings simulated"
    if cmd == "finetune":
        return f"{res['mode']}: train accuracy {res['train_metrics']['accuracy']:.4f}"
    return cmd


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        if args.command == "synth":
            spec = SyntheticSpec(generator=args.generator, users=args.users, classes=args.classes, frames=args.frames,
                                 noise=args.noise, seed=args.seed, write_meshes=args.write_meshes)
            print(synth_generate(spec, args.out))
            return 0
        if args.command == "gradcheck":
            rows = gradcheck_table(args.seed, corrupt=args.corrupt)
            print(json.dumps(rows, indent=2) if args.json else format_table(rows))
            failed = [r for r in rows if not r["passed"]]
            if failed:
                print(f"{len(failed)} gradient check(s) failed", file=sys.stderr)
            return 1 if failed else 0
        if args.command == "reproduce":
            ok, old, new = reproduce(args.report, args.out)
            print(f"original {old['digest']}\nreplayed {new['digest']}\n{'MATCH' if ok else 'MISMATCH'}")
            return 0 if ok else 1
        cfg = _cfg(args)
        if args.command == "config":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return 0
        manifest = load_manifest(args.manifest)
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        save_config(cfg, Path(cfg.out_dir) / f"config_{args.command}.json")
        rep = run_stage(args.command, manifest, cfg, mode=getattr(args, "mode", None), dims=getattr(args, "dims", None),
                        fractions=getattr(args, "fractions", None))
        print(_summary(rep))
        print(f"report digest {rep['digest']}")
        return 0
    except (P.PipelineError, ManifestError, SynthError, ValueError, FileNotFoundError) as exc:
        print(f"impsim {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
