"""Episode export/import across four on-disk layouts.

The formats are logical analogues of the usual trajectory-data containers
(single hierarchical container, directory-per-episode, append-only record
stream, frame-index video stub); byte layouts are specified in
``docs/formats.md``.  Exports are deterministic (the same episode set always
produces byte-identical files), so manifests can be content-addressed and
corruption is detectable by checksum alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .episodes import Episode, Step
from .errors import ChecksumMismatch, SchemaViolation, UnsupportedFormat, WriteFailure
from .state import canonical_json

EXPORT_SCHEMA_VERSION = 1

FORMAT_IDS = ("hierarchical-container", "episode-folder", "sequential-record", "video-stub")

HC_MAGIC = b"CLAWHC01"
SR_MAGIC = b"CLAWSR01"

# Fields each format can reproduce on import; video-stub drops actuation data.
FULL_FIELDS = frozenset({"episode_id", "task_id", "seed", "success",
                         "timestep", "joints", "effector", "gripper", "frame_ref"})
FORMAT_FIELDS: dict[str, frozenset] = {
    "hierarchical-container": FULL_FIELDS,
    "episode-folder": FULL_FIELDS,
    "sequential-record": FULL_FIELDS,
    "video-stub": frozenset({"episode_id", "task_id", "seed", "success",
                             "timestep", "frame_ref"}),
}


def _sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


@dataclass
class ExportManifest:
    format_id: str
    episode_ids: list[str]
    files: dict[str, str]                 # relative path -> sha256
    schema_version: int = EXPORT_SCHEMA_VERSION
    manifest_id: str = ""
    root: Path | None = None              # runtime location, not serialized

    def compute_id(self) -> str:
        body = {"format": self.format_id, "episodes": sorted(self.episode_ids),
                "files": dict(sorted(self.files.items())),
                "schema_version": self.schema_version}
        return _sha256(canonical_json(body).encode())

    def as_dict(self) -> dict:
        return {"schema": "export-manifest", "schema_version": self.schema_version,
                "format": self.format_id, "episodes": sorted(self.episode_ids),
                "files": dict(sorted(self.files.items())), "manifest_id": self.manifest_id}

    @classmethod
    def from_dict(cls, d: dict, root: Path | None = None) -> "ExportManifest":
        return cls(d["format"], list(d["episodes"]), dict(d["files"]),
                   d["schema_version"], d.get("manifest_id", ""), root)

    @classmethod
    def load(cls, root: str | Path) -> "ExportManifest":
        root = Path(root)
        raw = (root / "manifest.json").read_text("utf-8")
        return cls.from_dict(json.loads(raw), root)

    def checksum(self) -> str:
        """Hash of the manifest file itself (for context-level references)."""
        return _sha256(canonical_json(self.as_dict()).encode())


def manifest_for(episodes: list[Episode], format_id: str) -> ExportManifest:
    """Manifest an export WOULD have, computed without touching disk; lets
    callers choose content-addressed destinations before writing."""
    if format_id not in FORMAT_IDS:
        raise UnsupportedFormat(f"unknown export format {format_id!r}")
    episodes = sorted(episodes, key=lambda e: e.episode_id)
    files = _RENDERERS[format_id](episodes)
    manifest = ExportManifest(format_id, [e.episode_id for e in episodes],
                              {rel: _sha256(raw) for rel, raw in files.items()})
    manifest.manifest_id = manifest.compute_id()
    return manifest


def export_episodes(episodes: list[Episode], format_id: str,
                    destination: str | Path) -> ExportManifest:
    """Write ``episodes`` to ``destination`` in the given format.

    Deterministic: the rendered bytes depend only on the episode content.
    An empty episode list yields a valid manifest with no data files.
    """
    if format_id not in FORMAT_IDS:
        raise UnsupportedFormat(f"unknown export format {format_id!r}")
    dest = Path(destination)
    episodes = sorted(episodes, key=lambda e: e.episode_id)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        renderer = _RENDERERS[format_id]
        files = renderer(episodes)
        manifest = ExportManifest(format_id, [e.episode_id for e in episodes],
                                  {rel: _sha256(raw) for rel, raw in files.items()},
                                  root=dest)
        manifest.manifest_id = manifest.compute_id()
        for rel, raw in files.items():
            path = dest / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(raw)
        (dest / "manifest.json").write_text(canonical_json(manifest.as_dict()), "utf-8")
    except OSError as exc:
        raise WriteFailure(f"cannot write export to {dest}: {exc}")
    return manifest


# --- renderers: episode list -> {relative path: bytes} ---

def _render_hierarchical(episodes: list[Episode]) -> dict[str, bytes]:
    index: dict = {"schema_version": EXPORT_SCHEMA_VERSION, "episodes": {}}
    payload = io.BytesIO()

    def put_array(raw: bytes, dtype: str, shape: list[int]) -> dict:
        offset = payload.tell()
        payload.write(raw)
        return {"dtype": dtype, "shape": shape, "offset": offset, "nbytes": len(raw)}

    for ep in episodes:
        n, d = ep.length, ep.joint_dim
        timesteps = struct.pack(f"<{n}I", *(s.timestep for s in ep.steps))
        joints = struct.pack(f"<{n * d}d", *(v for s in ep.steps for v in s.joints))
        effector = struct.pack(f"<{n * 7}d", *(v for s in ep.steps for v in s.effector))
        gripper = struct.pack(f"<{n}d", *(s.gripper for s in ep.steps))
        frame_refs = canonical_json([s.frame_ref for s in ep.steps]).encode()
        index["episodes"][ep.episode_id] = {
            "task_id": ep.task_id, "seed": ep.seed, "success": ep.success,
            "length": n, "joint_dim": d,
            "arrays": {
                "timesteps": put_array(timesteps, "u4", [n]),
                "joints": put_array(joints, "f8", [n, d]),
                "effector": put_array(effector, "f8", [n, 7]),
                "gripper": put_array(gripper, "f8", [n]),
                "frame_refs": put_array(frame_refs, "json", [n]),
            },
        }
    index_raw = canonical_json(index).encode()
    blob = HC_MAGIC + struct.pack("<I", len(index_raw)) + index_raw + payload.getvalue()
    return {"data.hc": blob}


def _render_episode_folder(episodes: list[Episode]) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    for ep in episodes:
        d = ep.joint_dim
        meta = {"schema_version": EXPORT_SCHEMA_VERSION, "episode_id": ep.episode_id,
                "task_id": ep.task_id, "seed": ep.seed, "success": ep.success,
                "length": ep.length, "joint_dim": d}
        files[f"{ep.episode_id}/metadata.json"] = canonical_json(meta).encode()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["timestep", *(f"j{i}" for i in range(d)),
                         "ee_x", "ee_y", "ee_z", "ee_qw", "ee_qx", "ee_qy", "ee_qz",
                         "gripper", "frame_ref"])
        for s in ep.steps:
            writer.writerow([s.timestep, *(repr(v) for v in s.joints),
                             *(repr(v) for v in s.effector), repr(s.gripper), s.frame_ref])
        files[f"{ep.episode_id}/steps.csv"] = buf.getvalue().encode()
    return files


def _render_sequential(episodes: list[Episode]) -> dict[str, bytes]:
    out = io.BytesIO()
    out.write(SR_MAGIC)

    def frame(obj: dict):
        raw = canonical_json(obj).encode()
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)

    frame({"type": "header", "schema_version": EXPORT_SCHEMA_VERSION,
           "episodes": [e.episode_id for e in episodes]})
    for ep in episodes:
        frame({"type": "episode_start", "episode_id": ep.episode_id,
               "task_id": ep.task_id, "seed": ep.seed, "success": ep.success,
               "joint_dim": ep.joint_dim})
        for s in ep.steps:
            frame({"type": "step", "episode_id": ep.episode_id, "timestep": s.timestep,
                   "joints": s.joints, "effector": s.effector, "gripper": s.gripper,
                   "frame_ref": s.frame_ref})
        frame({"type": "episode_end", "episode_id": ep.episode_id, "length": ep.length})
    return {"records.sr": out.getvalue()}


def _render_video_stub(episodes: list[Episode]) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    for ep in episodes:
        frames = []
        for s in ep.steps:
            name = f"frame_{s.timestep:06d}.bin"
            files[f"{ep.episode_id}/{name}"] = f"FRAME|{ep.episode_id}|{s.timestep}".encode()
            frames.append({"timestep": s.timestep, "file": name, "frame_ref": s.frame_ref})
        meta = {"schema_version": EXPORT_SCHEMA_VERSION, "episode_id": ep.episode_id,
                "task_id": ep.task_id, "seed": ep.seed, "success": ep.success,
                "length": ep.length, "frames": frames}
        files[f"{ep.episode_id}/frames.json"] = canonical_json(meta).encode()
    return files


_RENDERERS = {
    "hierarchical-container": _render_hierarchical,
    "episode-folder": _render_episode_folder,
    "sequential-record": _render_sequential,
    "video-stub": _render_video_stub,
}


# --- import ---

def _verify_checksums(manifest: ExportManifest) -> dict[str, bytes]:
    if manifest.root is None:
        raise SchemaViolation("manifest has no on-disk root")
    contents: dict[str, bytes] = {}
    for rel, digest in sorted(manifest.files.items()):
        path = manifest.root / rel
        if not path.exists():
            raise ChecksumMismatch(f"missing file {rel}", file=rel)
        raw = path.read_bytes()
        if _sha256(raw) != digest:
            raise ChecksumMismatch(f"checksum mismatch for {rel}", file=rel)
        contents[rel] = raw
    return contents


def import_episodes(manifest: ExportManifest) -> list[Episode]:
    """Reconstruct episodes from an export; checksums are verified first.

    Raises ChecksumMismatch naming the corrupted file, or SchemaViolation with
    a field path when the bytes are intact but malformed.
    """
    if manifest.format_id not in FORMAT_IDS:
        raise UnsupportedFormat(f"unknown export format {manifest.format_id!r}")
    contents = _verify_checksums(manifest)
    return _PARSERS[manifest.format_id](manifest, contents)


def _parse_hierarchical(manifest, contents) -> list[Episode]:
    raw = contents.get("data.hc")
    if raw is None:
        raise SchemaViolation("data.hc missing from manifest", path="data.hc")
    if raw[:8] != HC_MAGIC:
        raise SchemaViolation("bad magic", path="data.hc:magic")
    (index_len,) = struct.unpack_from("<I", raw, 8)
    index = json.loads(raw[12:12 + index_len].decode())
    payload = raw[12 + index_len:]
    episodes = []
    for ep_id in sorted(index["episodes"]):
        meta = index["episodes"][ep_id]
        arrays = meta["arrays"]

        def take(name):
            a = arrays[name]
            return payload[a["offset"]:a["offset"] + a["nbytes"]], a

        t_raw, t_meta = take("timesteps")
        n = t_meta["shape"][0]
        d = arrays["joints"]["shape"][1]
        timesteps = struct.unpack(f"<{n}I", t_raw)
        joints = struct.unpack(f"<{n * d}d", take("joints")[0])
        effector = struct.unpack(f"<{n * 7}d", take("effector")[0])
        gripper = struct.unpack(f"<{n}d", take("gripper")[0])
        frame_refs = json.loads(take("frame_refs")[0].decode())
        steps = [Step(timesteps[i], list(joints[i * d:(i + 1) * d]),
                      list(effector[i * 7:(i + 1) * 7]), gripper[i], frame_refs[i])
                 for i in range(n)]
        episodes.append(Episode(ep_id, meta["task_id"], meta["seed"], steps, meta["success"]))
    return episodes


def _parse_episode_folder(manifest, contents) -> list[Episode]:
    episodes = []
    for ep_id in sorted(manifest.episode_ids):
        meta_rel = f"{ep_id}/metadata.json"
        steps_rel = f"{ep_id}/steps.csv"
        if meta_rel not in contents or steps_rel not in contents:
            raise SchemaViolation(f"episode {ep_id} files missing", path=meta_rel)
        meta = json.loads(contents[meta_rel].decode())
        reader = csv.reader(io.StringIO(contents[steps_rel].decode()))
        header = next(reader, None)
        if not header or header[0] != "timestep":
            raise SchemaViolation("steps.csv missing timestep column",
                                  path=f"{steps_rel}:timestep")
        d = meta["joint_dim"]
        steps = []
        for row in reader:
            steps.append(Step(int(row[0]), [float(v) for v in row[1:1 + d]],
                              [float(v) for v in row[1 + d:8 + d]],
                              float(row[8 + d]), row[9 + d]))
        episodes.append(Episode(meta["episode_id"], meta["task_id"], meta["seed"],
                                steps, meta["success"]))
    return episodes


def _parse_sequential(manifest, contents) -> list[Episode]:
    raw = contents.get("records.sr")
    if raw is None:
        raise SchemaViolation("records.sr missing from manifest", path="records.sr")
    if raw[:8] != SR_MAGIC:
        raise SchemaViolation("bad magic", path="records.sr:magic")
    pos = 8
    frames = []
    while pos < len(raw):
        if pos + 4 > len(raw):
            raise SchemaViolation("truncated frame length", path=f"records.sr:{pos}")
        (size,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if pos + size > len(raw):
            raise SchemaViolation("truncated frame payload", path=f"records.sr:{pos}")
        frames.append(json.loads(raw[pos:pos + size].decode()))
        pos += size
    if not frames or frames[0].get("type") != "header":
        raise SchemaViolation("missing header frame", path="records.sr:header")
    episodes: dict[str, Episode] = {}
    for fr in frames[1:]:
        kind = fr.get("type")
        if kind == "episode_start":
            episodes[fr["episode_id"]] = Episode(
                fr["episode_id"], fr["task_id"], fr["seed"], [], fr["success"])
        elif kind == "step":
            ep = episodes.get(fr["episode_id"])
            if ep is None:
                raise SchemaViolation("step before episode_start",
                                      path=f"records.sr:{fr['episode_id']}")
            ep.steps.append(Step(fr["timestep"], fr["joints"], fr["effector"],
                                 fr["gripper"], fr["frame_ref"]))
        elif kind == "episode_end":
            pass
        else:
            raise SchemaViolation(f"unknown frame type {kind!r}", path="records.sr")
    return [episodes[i] for i in sorted(episodes)]


def _parse_video_stub(manifest, contents) -> list[Episode]:
    episodes = []
    for ep_id in sorted(manifest.episode_ids):
        rel = f"{ep_id}/frames.json"
        if rel not in contents:
            raise SchemaViolation(f"frames.json missing for {ep_id}", path=rel)
        meta = json.loads(contents[rel].decode())
        steps = [Step(fr["timestep"], [], [], 0.0, fr["frame_ref"])
                 for fr in meta["frames"]]
        episodes.append(Episode(meta["episode_id"], meta["task_id"], meta["seed"],
                                steps, meta["success"]))
    return episodes


_PARSERS = {
    "hierarchical-container": _parse_hierarchical,
    "episode-folder": _parse_episode_folder,
    "sequential-record": _parse_sequential,
    "video-stub": _parse_video_stub,
}


# --- validation (the format-fidelity oracle) ---

@dataclass
class FormatViolation:
    file: str
    path: str
    rule: str

    def as_dict(self) -> dict:
        return {"file": self.file, "path": self.path, "rule": self.rule}


@dataclass
class FormatCheck:
    violations: list[FormatViolation] = field(default_factory=list)
    fields_checked: int = 0

    @property
    def score(self) -> float:
        """Normalized violation fraction in [0, 1]."""
        if self.fields_checked == 0:
            return 0.0
        return min(1.0, len(self.violations) / self.fields_checked)


def check_format(manifest: ExportManifest) -> FormatCheck:
    """Run every schema rule against an export; each executed rule counts as
    one validated field, so ``score`` is the normalized violation fraction."""
    out = FormatCheck()
    contents: dict[str, bytes] = {}
    for rel, digest in sorted(manifest.files.items()):
        out.fields_checked += 2  # file-exists, checksum-match
        path = manifest.root / rel if manifest.root else None
        if path is None or not path.exists():
            out.violations.append(FormatViolation(rel, rel, "file-exists"))
            continue
        raw = path.read_bytes()
        if _sha256(raw) != digest:
            out.violations.append(FormatViolation(rel, rel, "checksum-match"))
            continue
        contents[rel] = raw

    out.fields_checked += 1  # structure-parseable
    try:
        episodes = _PARSERS[manifest.format_id](manifest, contents)
    except (SchemaViolation, KeyError, ValueError, struct.error) as exc:
        out.violations.append(FormatViolation("", getattr(exc, "details", {}).get("path", ""),
                                              "structure-parseable"))
        return out

    out.fields_checked += 1  # episode-coverage
    if sorted(e.episode_id for e in episodes) != sorted(manifest.episode_ids):
        out.violations.append(FormatViolation("", "episodes", "episode-coverage"))

    partial = manifest.format_id == "video-stub"
    for ep in episodes:
        prefix = ep.episode_id
        out.fields_checked += 1  # timestep-monotone (from zero, step one)
        if [s.timestep for s in ep.steps] != list(range(ep.length)):
            out.violations.append(FormatViolation(prefix, f"{prefix}.timestep",
                                                  "timestep-monotone"))
        out.fields_checked += 1  # joint-dim-constant
        dims = {len(s.joints) for s in ep.steps}
        if len(dims) > 1:
            out.violations.append(FormatViolation(prefix, f"{prefix}.joints",
                                                  "joint-dim-constant"))
        if not partial:
            out.fields_checked += 1  # gripper-range
            if any(not (0.0 <= s.gripper <= 1.0) for s in ep.steps):
                out.violations.append(FormatViolation(prefix, f"{prefix}.gripper",
                                                      "gripper-range"))
    return out


def validate_format(manifest: ExportManifest) -> list[FormatViolation]:
    """Schema violations only (see check_format for the normalizing count)."""
    return check_format(manifest).violations


def episode_projection(ep: Episode, format_id: str) -> dict:
    """Project an episode onto the fields a format can represent; round-trip
    comparisons are defined over this projection."""
    fields = FORMAT_FIELDS[format_id]
    out = {k: getattr(ep, k) for k in ("episode_id", "task_id", "seed", "success")
           if k in fields}
    out["steps"] = [{k: getattr(s, k) for k in
                     ("timestep", "joints", "effector", "gripper", "frame_ref")
                     if k in fields}
                    for s in ep.steps]
    return out
