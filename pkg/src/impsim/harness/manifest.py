"""Dataset manifests: users, recordings, electrodes, classes and prompts."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..geodesic import ElectrodePair
from .arm import ArmModel, body_model


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Recording:
    id: str
    fps: float
    pose_csv: Optional[Path] = None
    mesh_dir: Optional[Path] = None
    impedance_csv: Optional[Path] = None
    label: Optional[str] = None
    user_id: Optional[str] = None
    truth_csv: Optional[Path] = None

    def files(self) -> list:
        return [p for p in (self.pose_csv, self.impedance_csv, self.truth_csv) if p is not None]


@dataclass(frozen=True)
class Prompt:
    prompt_id: str
    text: str
    class_hint: str
    embedding_row: int
    motions: tuple = ()


@dataclass(frozen=True)
class Manifest:
    path: Path
    name: str
    classes: tuple
    electrodes: ElectrodePair
    users: dict
    calibration: tuple
    prompts: tuple
    text_embeddings: Optional[Path]
    body: Optional[dict] = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def root(self) -> Path:
        return self.path.parent

    @property
    def user_ids(self) -> list:
        return list(self.users)

    def labelled(self) -> list:
        return [r for recs in self.users.values() for r in recs]

    def all_recordings(self) -> list:
        return self.labelled() + list(self.calibration) + [m for p in self.prompts for m in p.motions]

    def body_model(self) -> Optional[ArmModel]:
        if not self.body:
            return None
        b = dict(self.body)
        return body_model(b.pop("kind"), **b)

    def class_index(self, label: str) -> int:
        return self.classes.index(label)

    def inputs_digest(self) -> str:
        """Content hash over the manifest and every file it references."""
        h = hashlib.sha256()
        h.update(self.path.read_bytes())
        files = sorted({str(p) for r in self.all_recordings() for p in r.files()})
        if self.text_embeddings is not None:
            files.append(str(self.text_embeddings))
        for f in files:
            h.update(f.encode())
            h.update(Path(f).read_bytes())
        for r in self.all_recordings():
            if r.mesh_dir is not None:
                for obj in sorted(Path(r.mesh_dir).glob("frame_*.obj")):
                    h.update(obj.read_bytes())
        return h.hexdigest()


def _rec(root: Path, d: dict, user_id=None, need_imp: bool = True) -> Recording:
    if "id" not in d or "fps" not in d:
        raise ManifestError(f"recording entry {d} needs 'id' and 'fps'")
    path = lambda k: (root / d[k]) if d.get(k) else None  # noqa: E731
    rec = Recording(str(d["id"]), float(d["fps"]), path("pose_csv"), path("mesh_dir"), path("impedance_csv"),
                    d.get("label"), user_id, path("truth_csv"))
    if rec.pose_csv is None and rec.mesh_dir is None:
        raise ManifestError(f"recording {rec.id}: needs mesh_dir or pose_csv")
    if need_imp and rec.impedance_csv is None:
        raise ManifestError(f"recording {rec.id}: missing impedance_csv")
    for p in rec.files() + ([rec.mesh_dir] if rec.mesh_dir else []):
        if not p.exists():
            raise ManifestError(f"recording {rec.id}: referenced file {p} does not exist")
    if rec.fps <= 0:
        raise ManifestError(f"recording {rec.id}: fps must be positive")
    return rec


def parse_manifest(data: dict, path) -> Manifest:
    path = Path(path).resolve()
    root = path.parent
    try:
        classes = tuple(data["classes"])
        e = data["electrodes"]
    except KeyError as exc:
        raise ManifestError(f"manifest missing key {exc}") from None
    if len(set(classes)) != len(classes) or len(classes) < 2:
        raise ManifestError("classes must be at least 2 distinct names")
    electrodes = ElectrodePair(int(e[0]), int(e[1]))
    body = data.get("body")
    users = {}
    for u in data.get("users", []):
        uid = str(u["user_id"])
        if uid in users:
            raise ManifestError(f"duplicate user id {uid}")
        recs = [_rec(root, r, uid) for r in u.get("recordings", [])]
        for r in recs:
            if r.label not in classes:
                raise ManifestError(f"recording {r.id}: label {r.label!r} not among classes {list(classes)}")
        users[uid] = recs
    calib = tuple(_rec(root, r) for r in data.get("calibration", []))
    prompts = []
    for p in data.get("prompts", []):
        if p["class_hint"] not in classes:
            raise ManifestError(f"prompt {p['prompt_id']}: class_hint {p['class_hint']!r} unknown")
        motions = tuple(_rec(root, m, need_imp=False) for m in p.get("motions", []))
        prompts.append(Prompt(str(p["prompt_id"]), str(p.get("text", "")), p["class_hint"],
                              int(p.get("embedding_row", len(prompts))), motions))
    te = data.get("text_embeddings")
    te_path = root / te if te else None
    if te_path is not None and not te_path.exists():
        raise ManifestError(f"text embedding file {te_path} does not exist")
    m = Manifest(path, str(data.get("name", path.stem)), classes, electrodes, users, calib, tuple(prompts), te_path,
                 body, data)
    arm = m.body_model()
    if arm is not None:
        try:
            electrodes.check(arm.vertex_count)
        except IndexError as exc:
            raise ManifestError(f"electrodes invalid for the body mesh: {exc}") from None
    return m


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    return parse_manifest(json.loads(path.read_text(encoding="utf-8")), path)
