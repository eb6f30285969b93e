"""Stage orchestration: simulate -> ground -> simp -> pretrain -> finetune/eval.

Every stage writes its artifacts under ``cfg.out_dir/<stage>/`` and a JSON
report. Reports carry provenance (command, config, seeds, input content
hash, upstream digests) and a digest over everything except timing and
filesystem paths, so a replay in another directory can be compared.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .. import __version__
from ..downstream import (LabeledWindows, LoocvConfig, PolicyMode, check_partition, finetune, loocv, metrics, predict,
                          sweep_data_fraction, sweep_embedding_dim, write_fold_csv)
from ..geodesic import UnreachableError
from ..grounding import GroundingData, GroundingModel, make_windows, train_grounding
from ..mesh import MeshError, read_sequence
from ..nncore import Sequential, load_checkpoint, save_checkpoint, stage_rng
from ..relax import relaxed_series
from ..signal import TimeSeries, WindowSpec, align, read_pose_csv, read_signal_csv, resample, windows, write_signal_csv
from ..simpharnet import pretrain as run_pretrain
from ..simpharnet import read_text_embeddings
from .arm import pose_to_angles
from .config import PipelineConfig, canonical_digest, canonical_json
from .manifest import Manifest, Recording

UNDIGESTED = ("digest", "timing", "paths")


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    def __init__(self, artifact, command: str):
        super().__init__(f"missing {artifact}; run `impsim {command}` first")
        self.command = command


def report_digest(report: dict) -> str:
    return canonical_digest({k: v for k, v in report.items() if k not in UNDIGESTED})


def make_report(command: str, manifest: Manifest, cfg: PipelineConfig, result: dict, upstream=None,
                extra=None, started: Optional[float] = None) -> dict:
    cfg_d = cfg.to_dict()
    cfg_d.pop("out_dir")
    rep = {
        "command": command,
        "version": __version__,
        "provenance": {
            "config": cfg_d,
            "config_digest": canonical_digest(cfg_d),
            "seed": cfg.seed,
            "seeds": list(cfg.seeds),
            "inputs_digest": manifest.inputs_digest(),
            "upstream": upstream or {},
            **(extra or {}),
        },
        "result": result,
        "paths": {"manifest": str(manifest.path), "out_dir": str(Path(cfg.out_dir).resolve())},
    }
    if started is not None:
        rep["timing"] = {"seconds": time.time() - started}
    rep["digest"] = report_digest(rep)
    return rep


def write_report(path, report: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # round-trip through canonical JSON so numpy scalars never leak into the file
    path.write_text(json.dumps(json.loads(canonical_json(report)), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    return Path(cfg.out_dir) / stage


def _require(path: Path, command: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, command)
    return path


# -- simulate ---------------------------------------------------------------

def mesh_sequence(manifest: Manifest, rec: Recording):
    if rec.mesh_dir is not None:
        return read_sequence(rec.mesh_dir, rec.fps)
    arm = manifest.body_model()
    if arm is None:
        raise PipelineError(f"recording {rec.id}: pose_csv input needs a body model in the manifest")
    return arm.sequence(pose_to_angles(read_pose_csv(rec.pose_csv)), rec.fps)


def simulate(manifest: Manifest, cfg: PipelineConfig, log=None) -> dict:
    t0 = time.time()
    out = stage_dir(cfg, "sim")
    out.mkdir(parents=True, exist_ok=True)
    rows, run_log = [], []
    for rec in manifest.all_recordings():
        try:
            seq = mesh_sequence(manifest, rec)
            rs = relaxed_series(seq, manifest.electrodes, cfg.relax)
        except UnreachableError as exc:
            raise PipelineError(f"recording {rec.id}: {exc}") from exc
        except (MeshError, IndexError) as exc:
            raise PipelineError(f"recording {rec.id}: {exc}") from exc
        series = TimeSeries(rs.relaxed, rec.fps)
        if cfg.sim_rate is not None and len(series) >= 2:
            series = resample(series, cfg.sim_rate)
        write_signal_csv(out / f"{rec.id}.csv", series)
        run_log.append({"id": rec.id, "raw": rs.raw.tolist(), "relaxed": rs.relaxed.tolist(),
                        "iterations": rs.iterations.tolist()})
        rows.append({"id": rec.id, "frames": len(seq), "rows": len(series), "rate": series.rate,
                     "raw_mean": float(rs.raw.mean()), "relaxed_mean": float(rs.relaxed.mean()),
                     "relaxed_le_raw": bool(np.all(rs.relaxed <= rs.raw))})
        if log:
            log(rows[-1])
    (out / "run_log.json").write_text(canonical_json(run_log) + "\n", encoding="utf-8")
    rep = make_report("simulate", manifest, cfg, {"recordings": rows}, started=t0)
    write_report(out / "report.json", rep)
    return rep


def sim_series(cfg: PipelineConfig, rec: Recording) -> TimeSeries:
    return read_signal_csv(_require(stage_dir(cfg, "sim") / f"{rec.id}.csv", "simulate"))


def _upstream(cfg: PipelineConfig, *stages) -> dict:
    out = {}
    for st in stages:
        p = stage_dir(cfg, st) / "report.json"
        out[st] = read_report(_require(p, {"sim": "simulate", "ground": "ground", "simp": "ground",
                                           "pretrain": "pretrain"}[st]))["digest"]
    return out


# -- grounding ----------------------------------------------------------------

def _at_rate(series: TimeSeries, rate: float) -> TimeSeries:
    return series if np.isclose(series.rate, rate) else resample(series, rate)


def grounding_windows(manifest: Manifest, cfg: PipelineConfig, rec: Recording, stride: int) -> tuple:
    sim = _at_rate(sim_series(cfg, rec), rec.fps)
    real = _at_rate(read_signal_csv(rec.impedance_csv), rec.fps)
    pose = read_pose_csv(rec.pose_csv) if rec.pose_csv is not None else None
    if pose is None:
        raise PipelineError(f"recording {rec.id}: grounding needs a pose_csv")
    al = align(sim, real, search_lag=cfg.grounding.search_lag)
    lag = al.lag
    pose_al = pose[-lag:] if lag < 0 else pose
    data = make_windows(al.sim.values[:, 0], pose_al[:len(al.sim)], al.real.values,
                        WindowSpec(cfg.grounding.window, stride))
    return data, {"id": rec.id, "lag": lag, "correlation": al.correlation}


def ground(manifest: Manifest, cfg: PipelineConfig, log=None) -> dict:
    t0 = time.time()
    up = _upstream(cfg, "sim")
    recs = list(manifest.calibration)
    if not recs:
        raise PipelineError("manifest lists no calibration recordings for grounding")
    train_recs, test_recs = (recs[:-1], recs[-1:]) if len(recs) >= 2 else (recs, [])
    parts, aligns = [], []
    for rec in train_recs + test_recs:
        d, a = grounding_windows(manifest, cfg, rec, cfg.grounding.train_stride)
        parts.append(d)
        aligns.append(a)
    train = GroundingData.concat(parts[:len(train_recs)])
    test = GroundingData.concat(parts[len(train_recs):]) if test_recs else None
    model, rep = train_grounding(train, "both", cfg.grounding.schedule, stage_rng(cfg.seed, "ground"), test=test,
                                 val_fraction=cfg.grounding.val_fraction, log=log)
    out = stage_dir(cfg, "ground")
    save_checkpoint(out / "model.npz", model.net, model.meta())
    result = {"alignment": aligns, "train_recordings": [r.id for r in train_recs],
              "test_recordings": [r.id for r in test_recs], **rep}
    report = make_report("ground", manifest, cfg, result, upstream=up, started=t0)
    write_report(out / "report.json", report)
    simp = generate_simp(manifest, cfg, model)
    return report | {"simp": simp}


def load_grounding(cfg: PipelineConfig) -> GroundingModel:
    net, meta, _, _ = load_checkpoint(_require(stage_dir(cfg, "ground") / "model.npz", "ground"))
    return GroundingModel.from_checkpoint(net, meta)


def simp_series(model: GroundingModel, cfg: PipelineConfig, rec: Recording, batch: int = 512) -> TimeSeries:
    """Simulated impedance for one motion: one prediction per frame once a full window is available."""
    sim = _at_rate(sim_series(cfg, rec), rec.fps).values[:, 0]
    pose = read_pose_csv(rec.pose_csv)
    n = min(len(sim), len(pose))
    spec = WindowSpec(model.window, 1)
    pw = windows(sim[:n], spec)[:, :, 0]
    qw = windows(pose[:n].reshape(n, -1), spec)
    out = np.concatenate([model.predict(pw[i:i + batch], qw[i:i + batch]) for i in range(0, len(pw), batch)])
    return TimeSeries(out, rec.fps, ("magnitude", "phase"))


def generate_simp(manifest: Manifest, cfg: PipelineConfig, model: Optional[GroundingModel] = None) -> dict:
    t0 = time.time()
    model = model or load_grounding(cfg)
    up = _upstream(cfg, "sim", "ground")
    out = stage_dir(cfg, "simp")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for p in manifest.prompts:
        for m in p.motions:
            s = simp_series(model, cfg, m)
            write_signal_csv(out / f"{m.id}.csv", s)
            rows.append({"id": m.id, "prompt_id": p.prompt_id, "rows": len(s),
                         "magnitude_mean": float(s.values[:, 0].mean())})
    rep = make_report("simp", manifest, cfg, {"motions": rows}, upstream=up, started=t0)
    write_report(out / "report.json", rep)
    return rep


# -- HAR data -----------------------------------------------------------------

def real_windows(manifest: Manifest, cfg: PipelineConfig) -> LabeledWindows:
    xs, ys, us = [], [], []
    for uid, recs in manifest.users.items():
        for rec in recs:
            s = _at_rate(read_signal_csv(rec.impedance_csv), cfg.har.rate)
            if cfg.har.window.count(len(s)) == 0:
                continue
            w = windows(s, cfg.har.window)
            xs.append(w)
            ys.append(np.full(len(w), manifest.class_index(rec.label)))
            us.append(np.array([uid] * len(w)))
    if not xs:
        raise PipelineError("no labelled windows: recordings are shorter than one HAR window")
    return LabeledWindows(np.concatenate(xs), np.concatenate(ys), np.concatenate(us))


def simp_windows(manifest: Manifest, cfg: PipelineConfig) -> dict:
    _require(stage_dir(cfg, "simp") / "report.json", "ground")
    by_prompt = {}
    for p in manifest.prompts:
        ws = []
        for m in p.motions:
            s = _at_rate(read_signal_csv(stage_dir(cfg, "simp") / f"{m.id}.csv"), cfg.har.rate)
            if cfg.har.window.count(len(s)):
                ws.append(windows(s, cfg.har.window))
        if ws:
            by_prompt[p.prompt_id] = np.concatenate(ws)
    if len(by_prompt) < 2:
        raise PipelineError("fewer than 2 prompts produced simulated windows")
    return by_prompt


def simp_labelled(manifest: Manifest, cfg: PipelineConfig) -> LabeledWindows:
    by_prompt = simp_windows(manifest, cfg)
    hints = {p.prompt_id: manifest.class_index(p.class_hint) for p in manifest.prompts}
    xs = [w for w in by_prompt.values()]
    ys = [np.full(len(w), hints[p]) for p, w in by_prompt.items()]
    return LabeledWindows(np.concatenate(xs), np.concatenate(ys), np.array(["sim"] * sum(map(len, xs))))


# -- pretraining --------------------------------------------------------------

def pretrain_path(cfg: PipelineConfig, seed: int, dim: int) -> Path:
    return stage_dir(cfg, "pretrain") / f"seed{seed}_dim{dim}.npz"


def pretrain(manifest: Manifest, cfg: PipelineConfig, seeds=None, dims=None, log=None) -> dict:
    t0 = time.time()
    up = _upstream(cfg, "simp")
    if manifest.text_embeddings is None:
        raise PipelineError("manifest has no text_embeddings file")
    vectors, _ = read_text_embeddings(manifest.text_embeddings)
    by_prompt = simp_windows(manifest, cfg)
    runs = []
    for dim in dims or [cfg.embedding_dim]:
        for seed in seeds or cfg.seeds:
            res = run_pretrain(by_prompt, vectors, cfg.pretrain_schedule, cfg.pretrain_config(dim),
                               stage_rng(cfg.seed, f"run{seed}/pretrain/dim{dim}"), log=log)
            save_checkpoint(pretrain_path(cfg, seed, dim), res.model,
                            {"kind": "pretrain", "normalizer": res.normalizer.to_dict(), "seed": seed, "dim": dim})
            r = {k: v for k, v in res.report.items() if k != "history"}
            runs.append({"seed": int(seed), "embedding_dim": int(dim), **r, "history": res.report["history"]})
    rep = make_report("pretrain", manifest, cfg, {"runs": runs}, upstream=up,
                      extra={"subset": {"seeds": seeds, "dims": dims}} if seeds or dims else None, started=t0)
    # partial runs (single seed or dimension) keep their own report
    name = "report.json"
    if seeds or dims:
        name = f"report_dims{'-'.join(map(str, dims or [cfg.embedding_dim]))}_seeds{'-'.join(map(str, seeds or cfg.seeds))}.json"
    write_report(stage_dir(cfg, "pretrain") / name, rep)
    return rep


def encoder_provider(cfg: PipelineConfig, dim: int, manifest: Optional[Manifest] = None, auto: bool = False):
    def load(seed: int) -> Sequential:
        path = pretrain_path(cfg, seed, dim)
        if not path.exists():
            if not auto or manifest is None:
                raise MissingArtifactError(path, "pretrain")
            pretrain(manifest, cfg, seeds=[seed], dims=[dim])
        net, _, _, _ = load_checkpoint(path)
        return net.blocks["imp"]

    return load


# -- fine-tuning / evaluation ---------------------------------------------------

def _loocv_cfg(cfg: PipelineConfig, mode, fraction: float = 1.0, dim: Optional[int] = None) -> LoocvConfig:
    return LoocvConfig(replace(cfg.policy, mode=PolicyMode(mode)), cfg.finetune_schedule, tuple(cfg.seeds),
                       dim or cfg.embedding_dim, fraction, base_seed=cfg.seed)


def evaluate(manifest: Manifest, cfg: PipelineConfig, mode=None, fraction: float = 1.0, dim: Optional[int] = None,
             auto: bool = False, data: Optional[LabeledWindows] = None, log=None) -> dict:
    """Leave-one-user-out report for one policy mode."""
    mode = PolicyMode(mode or cfg.policy.mode)
    dim = dim or cfg.embedding_dim
    data = data if data is not None else real_windows(manifest, cfg)
    provider = None
    if mode != PolicyMode.NO_PRETRAIN:
        provider = encoder_provider(cfg, dim, manifest, auto)
        provider(cfg.seeds[0])  # fail early with an actionable message
    extra = simp_labelled(manifest, cfg) if cfg.mix_sim else None
    rep = loocv(data, len(manifest.classes), _loocv_cfg(cfg, mode, fraction, dim), provider,
                user_ids=manifest.user_ids, extra_train=extra, log=log)
    check_partition(rep, data)
    rep["classes"] = list(manifest.classes)
    return rep


def cmd_eval(manifest: Manifest, cfg: PipelineConfig, mode=None, auto: bool = False, log=None) -> dict:
    t0 = time.time()
    mode = PolicyMode(mode or cfg.policy.mode)
    up = _upstream(cfg, "pretrain") if mode != PolicyMode.NO_PRETRAIN and not auto else {}
    res = evaluate(manifest, cfg, mode, auto=auto, log=log)
    rep = make_report("eval", manifest, cfg, res, upstream=up, extra={"mode": mode.value}, started=t0)
    out = stage_dir(cfg, "eval")
    write_report(out / f"{mode.value}.json", rep)
    write_fold_csv(out / f"{mode.value}.csv", res)
    return rep


def cmd_finetune(manifest: Manifest, cfg: PipelineConfig, mode=None, seed: Optional[int] = None,
                 auto: bool = False) -> dict:
    """Train one classifier on every user, save it, and report training metrics."""
    t0 = time.time()
    mode = PolicyMode(mode or cfg.policy.mode)
    seed = cfg.seeds[0] if seed is None else seed
    data = real_windows(manifest, cfg)
    enc = None
    if mode != PolicyMode.NO_PRETRAIN:
        enc = encoder_provider(cfg, cfg.embedding_dim, manifest, auto)(seed)
    if cfg.mix_sim:
        data = LabeledWindows.concat([data, simp_labelled(manifest, cfg)])
    model, rep = finetune(enc, data, len(manifest.classes), replace(cfg.policy, mode=mode),
                          cfg.finetune_schedule.replace(rng_seed=seed), stage_rng(cfg.seed, f"run{seed}/finetune/all"),
                          cfg.embedding_dim, cfg.val_fraction)
    preds, _ = predict(model, data.x)
    out = stage_dir(cfg, "finetune")
    save_checkpoint(out / f"{mode.value}_seed{seed}.npz", model.net, model.meta())
    result = {**rep, "train_metrics": metrics(preds, data.y, len(manifest.classes)), "seed": seed}
    report = make_report("finetune", manifest, cfg, result, extra={"mode": mode.value}, started=t0)
    write_report(out / f"{mode.value}_seed{seed}.json", report)
    return report


def cmd_sweep_dim(manifest: Manifest, cfg: PipelineConfig, dims=None, log=None) -> dict:
    t0 = time.time()
    dims = list(dims or cfg.sweep_dims)
    data = real_windows(manifest, cfg)
    mode = cfg.policy.mode if cfg.policy.mode != PolicyMode.NO_PRETRAIN else PolicyMode.LATE_LEARNING
    rows = sweep_embedding_dim(dims, lambda d: evaluate(manifest, cfg, mode, dim=d, auto=True, data=data, log=log))
    rep = make_report("sweep-dim", manifest, cfg, {"mode": mode.value, "rows": rows}, started=t0)
    out = stage_dir(cfg, "sweep")
    write_report(out / "sweep_dim.json", rep)
    write_fold_csv(out / "sweep_dim.csv", [r["report"] for r in rows])
    return rep


def cmd_sweep_frac(manifest: Manifest, cfg: PipelineConfig, fractions=None, modes=None, log=None) -> dict:
    t0 = time.time()
    fractions = list(fractions or cfg.sweep_fractions)
    data = real_windows(manifest, cfg)
    kw = {"modes": [PolicyMode(m) for m in modes]} if modes else {}
    rows = sweep_data_fraction(fractions, lambda f, m: evaluate(manifest, cfg, m, fraction=f, auto=True, data=data,
                                                                log=log), **kw)
    rep = make_report("sweep-frac", manifest, cfg, {"rows": rows}, started=t0)
    out = stage_dir(cfg, "sweep")
    write_report(out / "sweep_frac.json", rep)
    write_fold_csv(out / "sweep_frac.csv", [r["report"] for r in rows])
    return rep


def ensure_upstream(manifest: Manifest, cfg: PipelineConfig, through: str) -> None:
    """Run missing stages up to and including ``through`` (sim, ground, pretrain)."""
    order = ["sim", "ground", "pretrain"]
    for st in order[:order.index(through) + 1]:
        if (stage_dir(cfg, st) / "report.json").exists():
            continue
        if st == "sim":
            simulate(manifest, cfg)
        elif st == "ground":
            ground(manifest, cfg)
        else:
            pretrain(manifest, cfg)
