"""Stage runners shared by the command line and the end-to-end tests.

Every stage reads and writes directories only (tensor sets, checkpoints,
JSON logs), so a run is fully described by its config and seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .diffusion import SamplerConfig
from .errors import ConfigError, IoError
from .metrics import MetricReport, evaluate_sets
from .model import DyaDiT, ModelConfig, TrainConfig, encode_dataset, generate, init_dyadit, make_bundle, train_dit
from .motion_repr import to_pose_features
from .synthetic_data import SynthConfig, Dataset, get_provider, load_dataset, save_dataset
from .synthetic_data import generate as synthesize
from .tensor_io import load_state, read_checkpoint_meta, read_tensor_set, save_checkpoint, write_tensor_set
from .tokenizer import MotionTokenizer, TokenizerConfig, gesture_arrays, train_tokenizer

SECTIONS = {
    "synthetic": SynthConfig,
    "tokenizer": TokenizerConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "sampler": SamplerConfig,
}
CONFIG_DIR = Path(__file__).parent / "configs"


# --- configuration ------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(doc: dict, key: str, value, default_section: str | None):
    parts = key.split(".")
    if parts[0] not in SECTIONS:
        if default_section is None:
            raise ConfigError(f"unknown config key {key!r}")
        parts = [default_section] + parts
    section, rest = parts[0], parts[1:]
    names = {f.name for f in fields(SECTIONS[section])}
    if not rest or rest[0] not in names:
        raise ConfigError(f"unknown config key {key!r}")
    target = doc.setdefault(section, {})
    for part in rest[:-1]:
        if not isinstance(target.get(part), dict):
            raise ConfigError(f"unknown config key {key!r}")
        target = target[part]
    if len(rest) > 1 and rest[-1] not in target:
        raise ConfigError(f"unknown config key {key!r}")
    target[rest[-1]] = value


def resolve_config(path=None, overrides=(), default_section: str | None = None) -> dict:
    """Defaults, then the JSON file, then ``key=value`` overrides; every key is checked."""
    doc: dict = {name: asdict(cls()) for name, cls in SECTIONS.items()}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        for section, values in loaded.items():
            if section not in SECTIONS or not isinstance(values, dict):
                raise ConfigError(f"unknown config key {section!r}")
            for key, value in values.items():
                _set_dotted(doc, f"{section}.{key}", value, None)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        _set_dotted(doc, key.strip(), _parse_value(text), default_section)
    build(doc)
    return doc


def build(doc: dict) -> dict:
    """Instantiate and validate every section's dataclass."""
    out = {}
    for name, cls in SECTIONS.items():
        try:
            obj = cls(**doc.get(name, {}))
        except TypeError as exc:
            raise ConfigError(f"bad {name} config: {exc}") from exc
        out[name] = obj.validate()
    return out


def toy_config_path() -> Path:
    return CONFIG_DIR / "toy.json"


# --- loading helpers ----------------------------------------------------------


def _require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise IoError(f"{what} not found: {path}")
    return path


def load_tokenizer(path) -> MotionTokenizer:
    meta = read_checkpoint_meta(_require(path, "tokenizer checkpoint"))
    model = MotionTokenizer(TokenizerConfig(**meta["config"]))
    load_state(path, model)
    return model.eval()


def load_dyadit(path) -> DyaDiT:
    meta = read_checkpoint_meta(_require(path, "model checkpoint"))
    model = DyaDiT(ModelConfig(**meta["model"]), seed=meta.get("seed", 0))
    load_state(path, model)
    return model.eval()


def _write_jsonl(path: Path, rows):
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# --- stages -------------------------------------------------------------------


def make_synthetic(config: SynthConfig, out) -> Dataset:
    dataset = synthesize(config)
    save_dataset(dataset, out)
    return dataset


def run_train_tokenizer(dataset_dir, config: TokenizerConfig, seed: int, out, log=None):
    dataset = load_dataset(_require(dataset_dir, "dataset"))
    model, history = train_tokenizer(dataset, config, seed=seed, log=log)
    out = Path(out)
    save_checkpoint(out, model, {"kind": "tokenizer", "config": asdict(config), "seed": seed,
                                 "version": __version__})
    _write_jsonl(out / "losses.jsonl", history)
    return model, history


def run_train_dit(dataset_dir, tokenizer_dir, model_cfg: ModelConfig, train_cfg: TrainConfig, seed: int, out,
                  log=None):
    tokenizer = load_tokenizer(tokenizer_dir)
    dataset = load_dataset(_require(dataset_dir, "dataset"))
    data = encode_dataset(dataset.samples, tokenizer)
    model, history = train_dit(data, model_cfg, train_cfg, seed=seed, log=log)
    out = Path(out)
    save_checkpoint(out, model, {"kind": "dyadit", "model": asdict(model_cfg), "train": asdict(train_cfg),
                                 "seed": seed, "tokenizer": str(tokenizer_dir), "version": __version__})
    _write_jsonl(out / "losses.jsonl", history)
    return model, history


@dataclass
class GenerationRequest:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    noise_seed: int = 0
    clips: list | None = None
    partner: bool = True
    style: bool = True
    relationship: int | None = None
    personality: list | None = None
    quantize: bool = True

    def conditioning_overrides(self):
        rel = None
        if self.relationship is not None:
            if self.relationship not in range(4):
                raise ConfigError(f"relationship must be an index in 0..3, got {self.relationship}")
            rel = np.eye(4, dtype=np.float32)[self.relationship]
        pers = None
        if self.personality is not None:
            pers = np.asarray(self.personality, dtype=np.float32)
            if pers.shape != (5,) or not np.all(np.isfinite(pers)):
                raise ConfigError("personality must be 5 finite values")
        return rel, pers


def generate_set(model: DyaDiT, tokenizer: MotionTokenizer, dataset: Dataset, request: GenerationRequest,
                 provider_seed: int = 0):
    """Generated clips (dicts with ``gesture_other`` and ``envelope``) plus a manifest."""
    indices = list(range(len(dataset))) if request.clips is None else [int(i) for i in request.clips]
    if any(i < 0 or i >= len(dataset) for i in indices):
        raise ConfigError(f"clip indices must be in 0..{len(dataset) - 1}")
    rel, pers = request.conditioning_overrides()
    samples = [dataset[i] for i in indices]
    data = encode_dataset(samples, tokenizer)
    bundle = make_bundle(model, data, None, partner=request.partner, style=request.style,
                         relationship=rel, personality=pers)
    seeds = [request.noise_seed + k for k in range(len(samples))]
    gestures = generate(model, tokenizer, bundle, request.sampler, seeds, quantize=request.quantize)
    provider = get_provider("synthetic", seed=provider_seed)
    clips = [{"gesture_other": g, "envelope": provider.envelope(s.audio_other).astype(np.float32)}
             for g, s in zip(gestures, samples)]
    manifest = {
        "sampler": request.sampler.to_dict(),
        "noise_seeds": seeds,
        "source_clips": indices,
        "partner": request.partner,
        "style": request.style,
        "relationship": [int(np.argmax(r)) for r in bundle.relationship.numpy()],
        "personality": bundle.personality.numpy().round(6).tolist(),
        "quantize": request.quantize,
    }
    return clips, manifest


def run_generate(dataset_dir, tokenizer_dir, model_dir, request: GenerationRequest, out):
    tokenizer = load_tokenizer(tokenizer_dir)
    model = load_dyadit(model_dir)
    dataset = load_dataset(_require(dataset_dir, "dataset"))
    clips, manifest = generate_set(model, tokenizer, dataset, request,
                                   provider_seed=dataset.config.get("provider_seed", 0))
    out = Path(out)
    write_tensor_set(out, clips, {"generation": manifest}, schema="dyad-generated")
    (out / "generation.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return clips, manifest


def _gestures(path) -> tuple[list, list | None]:
    clips, _ = read_tensor_set(_require(path, "tensor set"))
    gestures = [c["gesture_other"] for c in clips]
    envelopes = [c["envelope"] for c in clips] if all("envelope" in c for c in clips) else None
    return gestures, envelopes


def run_evaluate(generated_dir, reference_dir) -> tuple[MetricReport, list, list]:
    gen, envelopes = _gestures(generated_dir)
    ref, _ = _gestures(reference_dir)
    return evaluate_sets(gen, ref, envelopes), gen, ref


def untrained_pipeline(dataset: Dataset, tokenizer_cfg: TokenizerConfig, model_cfg: ModelConfig, seed: int = 0):
    """Random-weight tokenizer and DiT; latent statistics still come from the data."""
    torch.manual_seed(seed)
    tokenizer = MotionTokenizer(tokenizer_cfg).eval()
    tokenizer.set_normalization(torch.from_numpy(gesture_arrays(dataset.samples)))
    data = encode_dataset(dataset.samples, tokenizer)
    return tokenizer, init_dyadit(data, model_cfg, seed).eval()


def motion_amplitude(gesture) -> float:
    """Mean axis-angle magnitude over frames and joints."""
    return float(np.linalg.norm(to_pose_features(gesture), axis=1).mean())
