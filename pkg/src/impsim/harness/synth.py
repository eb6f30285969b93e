"""Procedural datasets standing in for the unpublished recordings.

``synth_generate`` writes an arm dataset: per-user labelled recordings
(pose CSV + impedance CSV), unlabelled calibration recordings used to fit
the grounding model, and a prompt table whose motions feed pretraining.
Impedance is a fixed smooth function of the true geodesic electrode distance
plus seeded Gaussian noise. Users differ only in how they move.

``grounding_affine_dataset`` is a smaller generator with no mesh at all:
the target is affine in a path-length signal and one informative pose
channel, which makes the value of each grounding input measurable.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..geodesic import dijkstra
from ..grounding import GroundingData, make_windows
from ..mesh import build_graph, reweight, write_sequence
from ..nncore import stage_rng
from ..signal import POSE_JOINTS, TimeSeries, WindowSpec, write_pose_csv, write_signal_csv
from ..simpharnet import write_text_embeddings
from .arm import ELBOW_JOINT, MAX_FLEXION, ArmModel, angles_to_pose, body_model

GENERATORS = ("articulated_arm", "cylinder_pair")

# impedance response to the geodesic length L (metres) relative to the rest length
RESPONSE = {"mag0": 480.0, "mag1": 2400.0, "mag2": 9000.0, "phase0": -0.35, "phase1": 4.0, "phase_noise_ratio": 0.002}

VERBS = ("curling", "pumping", "waving", "swinging", "shaking", "stretching")
# adverb, amplitude scale, tempo scale
STYLES = (("slowly", 0.9, 0.7), ("steadily", 1.0, 1.0), ("vigorously", 1.3, 1.4), ("gently", 0.7, 0.85),
          ("briskly", 1.0, 1.25), ("lazily", 0.8, 0.6))


@dataclass(frozen=True)
class SyntheticSpec:
    generator: str = "articulated_arm"
    users: int = 4
    classes: int = 3
    frames: int = 200
    motion_frames: int = 480
    fps: float = 20.0
    noise: float = 2.0
    seed: int = 7
    recordings_per_class: int = 1
    prompts_per_class: int = 6
    motions_per_prompt: int = 2
    calibration_recordings: int = 3
    calibration_frames: int = 2400
    text_dim: int = 768
    write_meshes: bool = False

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}, got {self.generator!r}")
        if self.users < 2:
            raise ValueError("leave-one-user-out needs at least 2 users")
        if self.classes < 2:
            raise ValueError("classification needs at least 2 classes")
        if self.prompts_per_class < 1 or self.motions_per_prompt < 1 or self.recordings_per_class < 1:
            raise ValueError("prompt, motion and recording counts must be >= 1")
        if self.calibration_recordings < 1:
            raise ValueError("at least one calibration recording is needed for grounding")
        if min(self.frames, self.motion_frames, self.calibration_frames) < 2:
            raise ValueError("recordings need at least 2 frames")
        if not self.fps > 0 or self.noise < 0:
            raise ValueError("fps must be positive and noise non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def smooth_signal(rng: np.random.Generator, n: int, fps: float, terms: int = 4, fmax: float = 0.8) -> np.ndarray:
    """Unit-variance sum of random low-frequency sinusoids."""
    t = np.arange(n) / fps
    s = np.zeros(n)
    for _ in range(terms):
        s += rng.normal() * np.sin(2 * np.pi * rng.uniform(0.1, fmax) * t + rng.uniform(0, 2 * np.pi))
    return s / math.sqrt(terms)


def impedance_response(length, rest_length: float, response: dict = RESPONSE) -> np.ndarray:
    """Noise-free (magnitude, phase) for geodesic lengths; shape (T, 2)."""
    d = np.asarray(length, dtype=np.float64) - rest_length
    mag = response["mag0"] + response["mag1"] * d + response["mag2"] * d * d
    phase = response["phase0"] + response["phase1"] * d
    return np.column_stack([mag, phase])


def class_style(k: int, n: int) -> dict:
    """Classes differ mostly in waveform shape; centres are close and frequencies shared."""
    return {"center": 0.8 + 0.4 * k / max(n - 1, 1), "amplitude": 0.4, "freq": 0.6 * 1.3 ** (k // 3),
            "wave": k % 3}


def _wave(kind: int, ph: np.ndarray) -> np.ndarray:
    if kind == 0:
        return np.sin(ph)
    if kind == 1:
        # quick flexion, slow release
        return (np.sin(ph) + 0.4 * np.sin(2 * ph)) / 1.25
    return np.tanh(2.5 * np.sin(ph)) / math.tanh(2.5)


def trajectory(rng: np.random.Generator, k: int, n: int, frames: int, fps: float, center: float = 0.0,
               amp: float = 1.0, freq: float = 1.0) -> np.ndarray:
    """Elbow flexion (radians) for class ``k``; offsets/scales personalise it."""
    st = class_style(k, n)
    t = np.arange(frames) / fps
    ph = 2 * np.pi * st["freq"] * freq * t + rng.uniform(0, 2 * np.pi)
    a = st["center"] + center + st["amplitude"] * amp * _wave(st["wave"], ph)
    a = a + 0.04 * smooth_signal(rng, frames, fps, 3, 0.2)
    return np.clip(a, 0.0, MAX_FLEXION)


def calibration_trajectory(rng: np.random.Generator, frames: int, fps: float) -> np.ndarray:
    a = 0.5 * MAX_FLEXION + 0.3 * MAX_FLEXION * smooth_signal(rng, frames, fps, 6, 1.2)
    return np.clip(a, 0.0, MAX_FLEXION)


def geodesic_lengths(arm: ArmModel, angles) -> np.ndarray:
    """True (unrelaxed) geodesic electrode distance per frame."""
    e = arm.electrodes()
    rest, w, faces = arm.rest_vertices(), arm.skin_weights(), arm.faces()
    from ..mesh import MeshFrame

    graph = build_graph(MeshFrame(rest, faces))
    out = np.empty(len(angles))
    for i, a in enumerate(np.asarray(angles, dtype=np.float64)):
        g = reweight(graph, MeshFrame(arm.pose(a, rest, w), faces))
        out[i] = dijkstra(g, e).length
    return out


class SynthError(OSError):
    pass


def _prepare_dir(out) -> Path:
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise SynthError(f"output directory {out} is not writable: {exc}") from exc
    return out


def class_names(n: int) -> list:
    return [f"{VERBS[k % len(VERBS)]}{'' if k < len(VERBS) else k // len(VERBS)}" for k in range(n)]


def text_embeddings(rng: np.random.Generator, n_classes: int, prompts_per_class: int, dim: int):
    """Class centroid plus a smaller prompt-specific direction, unit norm."""
    cent = rng.normal(size=(n_classes, dim))
    out = []
    for k in range(n_classes):
        for _ in range(prompts_per_class):
            v = cent[k] + 0.5 * rng.normal(size=dim)
            out.append(v / np.linalg.norm(v))
    return np.array(out)


def _write_recording(root: Path, rel: str, arm: ArmModel, angles: np.ndarray, fps: float,
                     noise_rng: np.random.Generator, noise: float, rest_len: float, write_mesh: bool) -> dict:
    lengths = geodesic_lengths(arm, angles)
    clean = impedance_response(lengths, rest_len)
    imp = clean + noise_rng.normal(size=clean.shape) * np.array([noise, noise * RESPONSE["phase_noise_ratio"]])
    base = root / rel
    base.parent.mkdir(parents=True, exist_ok=True)
    write_pose_csv(f"{base}_pose.csv", angles_to_pose(angles))
    write_signal_csv(f"{base}_imp.csv", TimeSeries(imp, fps, ("magnitude", "phase")))
    truth = root / "truth" / f"{rel.replace('/', '__')}_length.csv"
    truth.parent.mkdir(parents=True, exist_ok=True)
    write_signal_csv(truth, TimeSeries(lengths, fps, ("path_len",)))
    rec = {"id": rel.replace("/", "__"), "pose_csv": f"{rel}_pose.csv", "impedance_csv": f"{rel}_imp.csv",
           "fps": fps, "truth_csv": str(truth.relative_to(root))}
    if write_mesh:
        write_sequence(root / f"{rel}_mesh", arm.sequence(angles, fps))
        rec["mesh_dir"] = f"{rel}_mesh"
    return rec


def synth_generate(spec: SyntheticSpec, out) -> Path:
    """Write the dataset under ``out``; returns the manifest path."""
    root = _prepare_dir(out)
    arm = body_model(spec.generator)
    rest_len = float(geodesic_lengths(arm, [0.0])[0])
    names = class_names(spec.classes)
    noise_rng = stage_rng(spec.seed, "synth/noise")

    users = []
    urng = stage_rng(spec.seed, "synth/users")
    profiles = [{"center": float(urng.uniform(-0.25, 0.25)), "amp": float(urng.uniform(0.7, 1.3)),
                 "freq": float(urng.uniform(0.75, 1.35))} for _ in range(spec.users)]
    for u, prof in enumerate(profiles):
        recs = []
        for k in range(spec.classes):
            for r in range(spec.recordings_per_class):
                rng = stage_rng(spec.seed, f"synth/user{u}/class{k}/rec{r}")
                angles = trajectory(rng, k, spec.classes, spec.frames, spec.fps, **prof)
                rec = _write_recording(root, f"users/u{u}/c{k}_r{r}", arm, angles, spec.fps, noise_rng,
                                       spec.noise, rest_len, spec.write_meshes)
                rec["label"] = names[k]
                recs.append(rec)
        users.append({"user_id": f"u{u}", "profile": prof, "recordings": recs})

    calib = []
    for r in range(spec.calibration_recordings):
        angles = calibration_trajectory(stage_rng(spec.seed, f"synth/calib{r}"), spec.calibration_frames, spec.fps)
        calib.append(_write_recording(root, f"calibration/cal{r}", arm, angles, spec.fps, noise_rng, spec.noise,
                                      rest_len, False))

    prompts = []
    emb = text_embeddings(stage_rng(spec.seed, "synth/text"), spec.classes, spec.prompts_per_class, spec.text_dim)
    row = 0
    for k in range(spec.classes):
        for j in range(spec.prompts_per_class):
            adverb, amp_s, freq_s = STYLES[j % len(STYLES)]
            pid = f"p{k}_{j}"
            motions = []
            for m in range(spec.motions_per_prompt):
                rng = stage_rng(spec.seed, f"synth/prompt{pid}/motion{m}")
                angles = trajectory(rng, k, spec.classes, spec.motion_frames, spec.fps,
                                    center=float(rng.uniform(-0.35, 0.35)), amp=amp_s * float(rng.uniform(0.7, 1.3)),
                                    freq=freq_s * float(rng.uniform(0.85, 1.2)))
                rel = f"prompts/{pid}/m{m}_pose.csv"
                (root / rel).parent.mkdir(parents=True, exist_ok=True)
                write_pose_csv(root / rel, angles_to_pose(angles))
                motions.append({"id": f"{pid}__m{m}", "pose_csv": rel, "fps": spec.fps})
            prompts.append({"prompt_id": pid, "text": f"a person {names[k]} their arm {adverb}",
                            "class_hint": names[k], "embedding_row": row, "motions": motions})
            row += 1
    write_text_embeddings(root / "text_embeddings.csv", {p["prompt_id"]: emb[p["embedding_row"]] for p in prompts},
                          {p["prompt_id"]: p["class_hint"] for p in prompts})

    manifest = {
        "name": f"synthetic-{spec.generator}",
        "format": 1,
        "body": {"kind": spec.generator, **arm.to_dict()},
        "electrodes": [arm.electrodes().source, arm.electrodes().sink],
        "classes": names,
        "users": users,
        "calibration": calib,
        "prompts": prompts,
        "text_embeddings": "text_embeddings.csv",
        "synthetic": {"spec": spec.to_dict(), "response": RESPONSE, "rest_length": rest_len,
                      "pose_channel": [ELBOW_JOINT, 2]},
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def grounding_affine_dataset(seed: int = 0, recordings: int = 6, frames: int = 3000, test_frames: int = 1200,
                             stride: int = 5, pose_weight: float = 1.0, fps: float = 30.0, window: int = 60):
    """Train/test grounding data whose targets are affine in path length and one pose channel.

    Magnitude depends on both inputs (the pose term scaled by ``pose_weight``);
    phase depends on path length only. Three further pose channels move
    smoothly but carry no signal.
    """
    rng = stage_rng(seed, "grounding-affine")
    spec = WindowSpec(window, stride)

    def one(n):
        length = 0.5 + 0.05 * smooth_signal(rng, n, fps)
        pose = np.zeros((n, POSE_JOINTS, 3))
        u = smooth_signal(rng, n, fps, 2)
        pose[:, ELBOW_JOINT, 2] = 0.3 * u
        for j in (16, 17, 18):
            pose[:, j, 0] = 0.3 * smooth_signal(rng, n, fps, 2)
        mag = 500 + 800 * (length - 0.5) + pose_weight * 10 * u + rng.normal(scale=2.0, size=n)
        phase = -0.3 - 0.5 * (length - 0.5) + rng.normal(scale=0.002, size=n)
        return make_windows(length, pose, np.column_stack([mag, phase]), spec)

    train = GroundingData.concat([one(frames) for _ in range(recordings)])
    return train, one(test_frames)
