"""Corpus manifests: line-delimited JSON with a header line, plus synthetic corpus builders."""
import json
import logging
from pathlib import Path

from config import Label, Role, SyntheticWorldConfig
from utils.errors import ManifestError
from utils.imaging import load_image, save_image, save_mask
from utils.models import CorpusEntry, CorpusManifest, Image
from utils.synthetic import (
    draw_attributes,
    draw_identity,
    seed_for,
    synth_face_mask,
    synth_make_fake,
    synth_render,
)

_POOL, _REAL, _FAKE = 0, 1, 2


def validate_manifest(manifest: CorpusManifest) -> CorpusManifest:
    ids = [e.entry_id for e in manifest.entries]
    if len(ids) != len(set(ids)):
        raise ManifestError("Duplicate entry_id in manifest")

    if any(e.is_synthetic for e in manifest.entries) and manifest.world_config is None:
        raise ManifestError("Synthetic entries need a world_config header")

    pool_sources = set()
    for entry in manifest.entries:
        if entry.role == Role.REFERENCE_POOL:
            if entry.label != Label.REAL:
                raise ManifestError(f"Reference-pool entry {entry.entry_id} must be real")
            pool_sources.add(_source_key(entry))

    for entry in manifest.tests:
        if not manifest.reference_pool(entry.identity_label):
            raise ManifestError(f"Test identity {entry.identity_label} has no real reference-pool entry")
        if _source_key(entry) in pool_sources:
            raise ManifestError(f"Test entry {entry.entry_id} duplicates a reference-pool entry")
    return manifest


def _source_key(entry: CorpusEntry) -> tuple:
    if entry.path is not None:
        return ("path", entry.path)
    return ("synthetic", entry.identity_seed, entry.seed, entry.delta)


# ====================================================================
# Manifest I/O
# ====================================================================

def write_manifest(manifest: CorpusManifest, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "world_config": manifest.world_config.to_dict() if manifest.world_config else None,
        "dataset_root": manifest.dataset_root,
    }
    lines = [json.dumps({"header": header}, sort_keys=True)]
    lines += [json.dumps(entry.to_dict(), sort_keys=True) for entry in manifest.entries]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_manifest(path: str | Path) -> CorpusManifest:
    path = Path(path)
    try:
        lines = [line for line in path.read_text().splitlines() if line.strip()]
    except OSError as e:
        logging.error(f"Error in read_manifest: {str(e)}")
        raise ManifestError(f"Cannot read manifest {path}: {e}") from e
    if not lines:
        raise ManifestError(f"Manifest {path} is empty")

    try:
        first = json.loads(lines[0])
        if "header" not in first:
            raise ManifestError("First manifest line must be a header record")
        header = first["header"]
        world = SyntheticWorldConfig.from_dict(header["world_config"]) if header.get("world_config") else None
        root = header.get("dataset_root")
        if root is None and world is None:
            root = str(path.parent)
        entries = [CorpusEntry.from_dict(json.loads(line)) for line in lines[1:]]
    except ManifestError:
        raise
    except (KeyError, ValueError, TypeError) as e:
        logging.error(f"Error in read_manifest: {str(e)}")
        raise ManifestError(f"Malformed manifest {path}: {e}") from e
    return validate_manifest(CorpusManifest(entries, world_config=world, dataset_root=root))


# ====================================================================
# Synthetic corpora
# ====================================================================

def build_synthetic_corpus(cfg: SyntheticWorldConfig, n_identities: int = 20, n_real: int = 10, n_fake: int = 10,
                           delta: float = 0.5, pool_size: int = 1, frames_per_video: int = 1) -> CorpusManifest:
    """Per identity: pool_size real reference-pool frames, n_real real tests and n_fake tests
    with identity loss delta (real when delta is 0). Consecutive tests of one label are grouped
    frames_per_video at a time into videos."""
    if n_identities < 1 or pool_size < 1:
        raise ValueError("A corpus needs at least one identity and one reference-pool entry per identity")
    if delta < 0:
        raise ValueError(f"delta must be >= 0, got {delta}")

    entries = []
    for identity in range(n_identities):
        label = f"id{identity:03d}"

        def entry(kind: str, code: int, k: int, role: Role, is_fake: bool, entry_delta: float) -> CorpusEntry:
            sample_seed = seed_for(cfg.seed, identity, code, k)
            video = k // frames_per_video if role == Role.TEST else k
            return CorpusEntry(
                entry_id=f"{label}-{kind}{k:02d}",
                identity_label=label,
                role=role,
                label=Label.FAKE if is_fake else Label.REAL,
                video_id=f"{label}-{kind}-v{video:02d}",
                frame_index=k % frames_per_video if role == Role.TEST else 0,
                yaw=float(draw_attributes(cfg, sample_seed)[0] * 90.0),
                seed=sample_seed,
                delta=entry_delta,
                identity_seed=identity,
            )

        entries += [entry("ref", _POOL, k, Role.REFERENCE_POOL, False, 0.0) for k in range(pool_size)]
        entries += [entry("real", _REAL, k, Role.TEST, False, 0.0) for k in range(n_real)]
        entries += [entry("fake", _FAKE, k, Role.TEST, delta > 0, float(delta)) for k in range(n_fake)]

    return validate_manifest(CorpusManifest(entries, world_config=cfg))


class CorpusLoader:
    """Materializes manifest entries as images: rendered for synthetic entries, read from disk otherwise."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest

    def load(self, entry: CorpusEntry) -> Image:
        if entry.is_synthetic:
            return materialize_synthetic(entry, self.manifest.world_config)
        path = Path(entry.path)
        if not path.is_absolute() and self.manifest.dataset_root:
            path = Path(self.manifest.dataset_root) / path
        return load_image(path)


def materialize_synthetic(entry: CorpusEntry, cfg: SyntheticWorldConfig) -> Image:
    mu, detail = draw_identity(cfg, entry.identity_seed)
    attr = draw_attributes(cfg, entry.seed)
    if entry.delta > 0:
        return synth_make_fake(mu, attr, entry.delta, cfg, entry.identity_label, detail, entry.seed).image
    return synth_render(mu, attr, cfg, detail, entry.seed)


def write_corpus(manifest: CorpusManifest, out_dir: str | Path) -> Path:
    """Manifest, world config, and one image + mask PNG per entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    loader = CorpusLoader(manifest)
    for entry in manifest.entries:
        image = loader.load(entry)
        save_image(image, out_dir / "images" / f"{entry.entry_id}.png")
        if manifest.world_config is not None:
            save_mask(synth_face_mask(image, manifest.world_config), out_dir / "masks" / f"{entry.entry_id}.png")
    if manifest.world_config is not None:
        manifest.world_config.save(out_dir / "world_config.json")
    return write_manifest(manifest, out_dir / "manifest.jsonl")
