"""Corpus generation, manifests, feature caching and the three recipes.

Workspace layout (all paths in manifests are relative to the workspace root)::

    rirs/<corpus>-<hash>/room_NNN.wav(.txt)
    corpora/<corpus>-<hash>/audio/<utt>.wav
    corpora/<corpus>-<hash>/manifest.csv
    cache/features/<audio-hash>-<feature-hash>.feat
    models/<name>-<target>.blstm (+ .log), models/fusion-<target>.svr
    estimates/<recipe>/<name>-<target>.csv (+ .meta.json)
    reports/<recipe>/<name>-<target>.json / .csv
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import blstm, svr
from .audio import read_wav, write_wav
from .dsp import FRAME_MS, SAMPLE_RATE, Waveform
from .errors import ConfigError, DataError, EmptyDataset
from .evaluation import TARGET_COLUMNS, evaluate_report, quadratic_mean, write_estimates, write_report
from .features.assemble import N_FEATURES, assemble_feature_matrix
from .features.io import load_features, save_features
from .rir import RirRecord, design_room, load_rir, save_rir, simulate_rir, stochastic_rir
from .synth import NOISE_GENERATORS, make_noise, speech_like, synth_utterance

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
FEATURE_VERSION = "nira-features-1"
SPLITS = ("train", "dev", "eval")
RIR_GENERATORS = ("image", "stochastic")

DEFAULT_CORPUS = {
    "generator": "image",
    "rooms": 40,
    "utterances": 400,
    "duration_s": 3.0,
    "noise_types": ["babble", "fan"],
    "snr_db": [0, 10, 20],
    "t60_range": [0.2, 1.2],
    "drr_range": [-6.0, 15.0],
    "jitter": 0.1,
}

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "workspace": ".",
    "seed": 0,
    "workers": 1,
    "targets": ["t60", "drr"],
    "corpora": {
        "primary": {},
        "heldout": {"rooms": 20, "utterances": 200},
        "measured": {"generator": "stochastic", "rooms": 20, "utterances": 200},
        "simulated": {"rooms": 20, "utterances": 200, "noise_types": ["white"]},
    },
    "split": {"ratios": [0.7, 0.2, 0.1], "stratify": True},
    "train": {
        "hidden_sizes": [64],
        "minibatch": 25,
        "max_epochs": 50,
        "patience": 5,
        "learning_rate": 1e-4,
        "gradient_clip": 10.0,
        "sweep": False,
    },
    "v2": {"mixture": {"primary": 0.6, "heldout": 0.2, "simulated": 0.2}, "train_size": None,
           "dev_fraction": 0.3},
    "v3": {
        "submodels": {"v1": "primary", "alpha": "heldout", "beta": "measured", "gamma": "simulated"},
        "submodel_split": [0.8, 0.2, 0.0],
    },
}


# ---------------------------------------------------------------- config

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _corpus_spec(name: str, raw: dict) -> dict:
    spec = _merge(DEFAULT_CORPUS, raw)
    unknown = set(spec) - set(DEFAULT_CORPUS)
    if unknown:
        raise ConfigError(f"corpus {name}: unknown keys {sorted(unknown)}")
    if spec["generator"] not in RIR_GENERATORS:
        raise ConfigError(f"corpus {name}: generator must be one of {RIR_GENERATORS}")
    if spec["rooms"] < 1 or spec["utterances"] < 1:
        raise ConfigError(f"corpus {name}: rooms and utterances must be positive")
    for kind in spec["noise_types"]:
        if kind not in NOISE_GENERATORS and kind != "none":
            raise ConfigError(f"corpus {name}: unknown noise type {kind!r}")
    if not spec["noise_types"] or not spec["snr_db"]:
        raise ConfigError(f"corpus {name}: noise_types and snr_db must be non-empty")
    lo, hi = spec["t60_range"]
    if not 0 < lo <= hi:
        raise ConfigError(f"corpus {name}: bad t60_range")
    return spec


def _check_ratios(ratios, what: str):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"{what}: need three non-negative ratios summing to 1, got {ratios}")


def validate_config(cfg: dict) -> dict:
    """Fill defaults and check the whole config before any compute."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(DEFAULT_CONFIG) - {"recipe"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if cfg.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')}")
    corpora = cfg.get("corpora")
    out = _merge(DEFAULT_CONFIG, {k: v for k, v in cfg.items() if k != "corpora"})
    if corpora is not None:
        out["corpora"] = corpora
    # weight tables replace the default instead of merging into it
    if isinstance(cfg.get("v2"), dict) and "mixture" in cfg["v2"]:
        out["v2"]["mixture"] = copy.deepcopy(cfg["v2"]["mixture"])
    out["corpora"] = {name: _corpus_spec(name, raw or {}) for name, raw in out["corpora"].items()}
    for t in out["targets"]:
        if t not in TARGET_COLUMNS:
            raise ConfigError(f"unknown target {t!r}")
    _check_ratios(out["split"]["ratios"], "split.ratios")
    _check_ratios(out["v3"]["submodel_split"], "v3.submodel_split")
    tr = out["train"]
    try:
        blstm.TrainConfig(**_train_kwargs(tr, 0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc
    if not 1 <= len(tr["hidden_sizes"]) <= 4 or any(h not in blstm.HIDDEN_CHOICES for h in tr["hidden_sizes"]):
        raise ConfigError(f"train.hidden_sizes must be 1-4 layers from {blstm.HIDDEN_CHOICES}")
    mix = out["v2"]["mixture"]
    if not math.isclose(sum(mix.values()), 1.0, abs_tol=1e-9) or any(w < 0 for w in mix.values()):
        raise ConfigError("v2.mixture weights must be non-negative and sum to 1")
    if len([w for w in mix.values() if w > 0]) < 2:
        raise ConfigError("v2.mixture must draw from at least two corpora")
    subs = out["v3"]["submodels"]
    if list(subs) != list(svr.COMPONENTS):
        raise ConfigError(f"v3.submodels must name exactly {svr.COMPONENTS} in that order")
    return out


def check_corpora(cfg: dict, names) -> None:
    missing = sorted(set(names) - set(cfg["corpora"]))
    if missing:
        raise ConfigError(f"config does not define corpora {missing}")


def load_config(path, seed: int | None = None) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = validate_config(raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if not Path(cfg["workspace"]).is_absolute():
        cfg["workspace"] = str((Path(path).parent / cfg["workspace"]).resolve())
    return cfg


def stable_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (paths and worker counts excluded)."""
    return stable_hash({k: v for k, v in cfg.items() if k not in ("workspace", "workers")})


def _train_kwargs(tr: dict, seed: int) -> dict:
    keys = ("minibatch", "max_epochs", "patience", "learning_rate", "gradient_clip")
    return {**{k: tr[k] for k in keys}, "seed": seed}


# ---------------------------------------------------------------- manifests

@dataclass
class Record:
    utterance_id: str
    audio_path: str
    corpus: str
    room_id: str
    rir_path: str
    noise_type: str
    snr_db: float
    t60_s: float
    drr_db: float
    split: str = ""

    def labels(self) -> dict:
        return {"t60_s": self.t60_s, "drr_db": self.drr_db, "noise_type": self.noise_type,
                "snr_db": self.snr_db, "room_id": self.room_id, "corpus": self.corpus}


MANIFEST_FIELDS = tuple(f.name for f in fields(Record))


@dataclass
class DatasetManifest:
    records: list

    def __post_init__(self):
        ids = [r.utterance_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate utterance ids in manifest")

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]

    def ids(self) -> set:
        return {r.utterance_id for r in self.records}

    def labels(self) -> dict:
        return {r.utterance_id: r.labels() for r in self.records}

    def check_files(self, root) -> None:
        missing = [r.audio_path for r in self.records if not (Path(root) / r.audio_path).is_file()]
        if missing:
            raise DataError(f"{len(missing)} audio files missing, e.g. {missing[:3]}")

    def write_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            out = csv.DictWriter(fh, MANIFEST_FIELDS)
            out.writeheader()
            for r in self.records:
                row = asdict(r)
                row["snr_db"] = repr(float(r.snr_db))
                row["t60_s"] = repr(float(r.t60_s))
                row["drr_db"] = repr(float(r.drr_db))
                out.writerow(row)

    @classmethod
    def read_csv(cls, path, root=None) -> "DatasetManifest":
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
                    raise DataError(f"{path}: unexpected manifest header {reader.fieldnames}")
                records = [
                    Record(**{**row, "snr_db": float(row["snr_db"]), "t60_s": float(row["t60_s"]),
                              "drr_db": float(row["drr_db"])})
                    for row in reader
                ]
        except FileNotFoundError as exc:
            raise DataError(f"manifest not found: {path}") from exc
        manifest = cls(records)
        if root is not None:
            manifest.check_files(root)
        return manifest


def _largest_remainder(n: int, ratios) -> list[int]:
    raw = [n * r for r in ratios]
    counts = [math.floor(x) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (counts[i] - raw[i], i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(records: list, ratios=(0.7, 0.2, 0.1), seed: int = 0, stratify: bool = False) -> list:
    """Assign train/dev/eval by seeded shuffle; returns new records.

    Unstratified counts are exact to within one record.  Stratified mode
    moves whole rooms: rooms are shuffled and each goes to the split with the
    largest remaining shortfall relative to its target, so no room appears
    in two splits.
    """
    _check_ratios(list(ratios), "split ratios")
    rng = np.random.default_rng(seed)
    targets = _largest_remainder(len(records), ratios)
    out = [copy.copy(r) for r in records]
    if not stratify:
        order = rng.permutation(len(out))
        bounds = np.cumsum(targets)
        for rank, i in enumerate(order):
            out[i].split = SPLITS[int(np.searchsorted(bounds, rank, side="right"))]
        return out
    rooms: dict = {}
    for i, r in enumerate(out):
        rooms.setdefault(r.room_id, []).append(i)
    names = sorted(rooms)
    filled = [0, 0, 0]
    for k in rng.permutation(len(names)):
        members = rooms[names[k]]
        shortfall = [(targets[s] - filled[s]) / targets[s] if targets[s] else -np.inf for s in range(3)]
        s = int(np.argmax(shortfall))
        filled[s] += len(members)
        for i in members:
            out[i].split = SPLITS[s]
    return out


def check_leaks(roles: dict) -> None:
    """``roles`` maps role name to a set of ids; fitting and evaluation roles must not overlap."""
    fit = set().union(*(v for k, v in roles.items() if not k.startswith("eval")))
    evaluation = set().union(*(v for k, v in roles.items() if k.startswith("eval")))
    overlap = fit & evaluation
    if overlap:
        raise DataError(f"{len(overlap)} utterances used for both fitting and evaluation, e.g. {sorted(overlap)[:3]}")


# ---------------------------------------------------------------- workspace

class Workspace:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.root = Path(cfg["workspace"])
        self.seed = int(cfg["seed"])
        self.hash = config_hash(cfg)

    def corpus_key(self, name: str) -> str:
        return f"{name}-{stable_hash({'corpus': self.cfg['corpora'][name], 'seed': self.seed, 'name': name})[:10]}"

    def rel(self, path) -> str:
        return Path(path).relative_to(self.root).as_posix()

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    def stamp(self, **extra) -> dict:
        return {"config_hash": self.hash, "seed": self.seed, **extra}


def _room_rng(seed: int, corpus: str, index: int, stream: int) -> np.random.Generator:
    salt = int(hashlib.sha256(corpus.encode()).hexdigest()[:8], 16)
    return np.random.default_rng([seed, salt, stream, index])


def _make_rir(spec: dict, seed: int, corpus: str, i: int) -> RirRecord:
    rng = _room_rng(seed, corpus, i, 0)
    t60 = rng.uniform(*spec["t60_range"])
    drr = rng.uniform(*spec["drr_range"])
    if spec["generator"] == "image":
        room = design_room(rng, t60, drr, seed=int(rng.integers(2**31)), jitter=spec["jitter"])
        rec = simulate_rir(room).labelled()
    else:
        rec = stochastic_rir(t60, drr, rng).labelled()
    rec.meta.update({"t60_target": t60, "drr_target": drr, "corpus": corpus, "seed": seed})
    return rec


def _rir_job(args):
    spec, seed, corpus, i, path = args
    save_rir(path, _make_rir(spec, seed, corpus, i))
    return path


def _map(fn, jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def simulate_rirs(ws: Workspace, corpus: str) -> list[Path]:
    """Generate (or reuse) the room impulse responses of one corpus."""
    check_corpora(ws.cfg, [corpus])
    spec = ws.cfg["corpora"][corpus]
    folder = ws.path("rirs", ws.corpus_key(corpus))
    folder.mkdir(parents=True, exist_ok=True)
    paths = [folder / f"room_{i:03d}.wav" for i in range(spec["rooms"])]
    jobs = [(spec, ws.seed, corpus, i, p) for i, p in enumerate(paths) if not Path(str(p) + ".txt").exists()]
    log.info("%s: simulating %d of %d RIRs", corpus, len(jobs), len(paths))
    _map(_rir_job, jobs, ws.cfg["workers"])
    return paths


def _utterance_job(args):
    spec, seed, corpus, u, rir_path, out_path = args
    rec = load_rir(rir_path)
    rng = _room_rng(seed, corpus, u, 1)
    clean = speech_like(spec["duration_s"], rng)
    kinds, snrs = spec["noise_types"], spec["snr_db"]
    kind = kinds[u % len(kinds)]
    snr = float(snrs[(u // len(kinds)) % len(snrs)])
    if kind == "none":
        noise, snr = None, math.inf
    else:
        noise = make_noise(kind, spec["duration_s"] + rec.rir.size / SAMPLE_RATE + 0.01, rng)
    y = synth_utterance(clean, rec.rir, noise, snr)
    write_wav(out_path, Waveform(y.samples.astype(np.float32).astype(np.float64), y.sample_rate), pcm16=False)
    return kind, snr, rec.t60_s, rec.drr_db


def synth_corpus(ws: Workspace, corpus: str) -> DatasetManifest:
    """Synthesize (or reuse) the utterances of a corpus and write its manifest.

    Utterance ``u`` uses room ``u mod rooms``; noise types and SNRs cycle so
    every (noise, SNR) pair is equally represented.
    """
    spec = ws.cfg["corpora"][corpus]
    key = ws.corpus_key(corpus)
    manifest_path = ws.path("corpora", key, "manifest.csv")
    if manifest_path.exists():
        return DatasetManifest.read_csv(manifest_path, ws.root)
    rirs = simulate_rirs(ws, corpus)
    audio_dir = ws.path("corpora", key, "audio")
    audio_dir.mkdir(parents=True, exist_ok=True)
    jobs, ids = [], []
    for u in range(spec["utterances"]):
        utt = f"{corpus}-{u:05d}"
        room = u % spec["rooms"]
        jobs.append((spec, ws.seed, corpus, u, rirs[room], audio_dir / f"{utt}.wav"))
        ids.append((utt, room))
    log.info("%s: synthesizing %d utterances", corpus, len(jobs))
    results = _map(_utterance_job, jobs, ws.cfg["workers"])
    records = [
        Record(utt, ws.rel(job[5]), corpus, f"{corpus}/room_{room:03d}", ws.rel(job[4]), kind, snr, t60, drr)
        for (utt, room), job, (kind, snr, t60, drr) in zip(ids, jobs, results)
    ]
    manifest = DatasetManifest(records)
    manifest.write_csv(manifest_path)
    return manifest


# ---------------------------------------------------------------- features

FEATURE_CONFIG_HASH = stable_hash({"version": FEATURE_VERSION, "sample_rate": SAMPLE_RATE,
                                   "frame_ms": FRAME_MS, "columns": N_FEATURES})


def audio_hash(w: Waveform) -> str:
    h = hashlib.sha256(np.ascontiguousarray(w.samples, dtype="<f8").tobytes())
    h.update(str(w.sample_rate).encode())
    return h.hexdigest()[:24]


def _extract_job(args):
    audio_path, cache_path, utt, meta = args
    w = read_wav(audio_path)
    key_path = Path(cache_path.format(audio_hash(w)))
    if key_path.exists():
        return str(key_path), True, None
    try:
        fm = assemble_feature_matrix(w, utt)
    except DataError as exc:
        return None, False, f"{type(exc).__name__}: {exc}"
    save_features(key_path, fm, meta)
    return str(key_path), False, None


@dataclass
class FeatureSet:
    paths: dict  # utterance id -> cache file
    hits: int
    misses: int
    failed: dict

    def load(self, utt: str):
        fm, _ = load_features(self.paths[utt])
        return fm


def extract_features(ws: Workspace, records: list) -> FeatureSet:
    """Compute or reuse cached feature matrices; failures are logged and skipped."""
    template = str(ws.path("cache", "features", "{}-" + FEATURE_CONFIG_HASH + ".feat"))
    jobs = [(ws.root / r.audio_path, template, r.utterance_id,
             {"feature_hash": FEATURE_CONFIG_HASH, **ws.stamp()}) for r in records]
    results = _map(_extract_job, jobs, ws.cfg["workers"])
    paths, failed, hits, misses = {}, {}, 0, 0
    for r, (path, hit, err) in zip(records, results):
        if err is not None:
            failed[r.utterance_id] = err
            log.warning("feature extraction failed for %s: %s", r.utterance_id, err)
            continue
        paths[r.utterance_id] = path
        hits += hit
        misses += not hit
    log.info("features: %d cache hits, %d extracted, %d failed", hits, misses, len(failed))
    return FeatureSet(paths, hits, misses, failed)


# ---------------------------------------------------------------- models

def _pairs(records, feats: FeatureSet, target: str):
    col = TARGET_COLUMNS[target]
    return [(feats.load(r.utterance_id).values, getattr(r, col)) for r in records if r.utterance_id in feats.paths]


def train_model(ws: Workspace, name: str, target: str, train_records, dev_records, feats: FeatureSet):
    """Train (or reuse) one BLSTM; returns ``(model, path)``.

    A model file is reused when its stored stage hash matches the current
    training data and settings.
    """
    tr = ws.cfg["train"]
    stage = stable_hash({
        "train": sorted(r.utterance_id for r in train_records),
        "dev": sorted(r.utterance_id for r in dev_records),
        "settings": tr, "target": target, "seed": ws.seed, "features": FEATURE_CONFIG_HASH,
    })
    path = ws.path("models", f"{name}-{target}.blstm")
    if path.exists():
        model = blstm.load_model(path)
        if model.meta.get("stage_hash") == stage:
            log.info("reusing model %s", path)
            return model, path
    train_set = _pairs(train_records, feats, target)
    dev_set = _pairs(dev_records, feats, target)
    if not train_set or not dev_set:
        raise EmptyDataset(f"{name}/{target}: empty train or dev set")
    candidates = blstm.sweep_grid() if tr["sweep"] else [
        {"layers": len(tr["hidden_sizes"]), "hidden": tuple(tr["hidden_sizes"]), "minibatch": tr["minibatch"]}
    ]
    best, best_lines, best_dev = None, None, math.inf
    for cand in candidates:
        hidden = cand["hidden"] if isinstance(cand["hidden"], tuple) else (cand["hidden"],) * cand["layers"]
        config = blstm.TrainConfig(**{**_train_kwargs(tr, ws.seed), "minibatch": cand["minibatch"]})
        log.info("%s/%s: training %s minibatch %d", name, target, hidden, cand["minibatch"])
        model, lines = blstm.train(train_set, dev_set, config, hidden_sizes=hidden, target=target)
        if model.meta["best_dev_rmsd"] < best_dev:
            best, best_lines, best_dev = model, lines, model.meta["best_dev_rmsd"]
    best.meta.update(ws.stamp(stage_hash=stage, name=name))
    blstm.save_model(path, best)
    Path(str(path) + ".log").write_text("\n".join(best_lines) + "\n")
    return best, path


def estimate(model, records, feats: FeatureSet) -> list:
    """``(utterance_id, temporal-average estimate)`` for every record with features."""
    return [(r.utterance_id, blstm.temporal_average(blstm.blstm_forward(model, feats.load(r.utterance_id))))
            for r in records if r.utterance_id in feats.paths]


def _emit(ws: Workspace, recipe: str, name: str, target: str, rows, labels, extra_meta=None):
    est_path = ws.path("estimates", recipe, f"{name}-{target}.csv")
    write_estimates(est_path, rows, target)
    meta = ws.stamp(recipe=recipe, model=name, **(extra_meta or {}))
    Path(str(est_path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    report = evaluate_report(rows, labels, target, meta=meta)
    write_report(report, ws.path("reports", recipe, f"{name}-{target}.json"),
                 ws.path("reports", recipe, f"{name}-{target}.csv"))
    return report


def _baseline_rmsd(target: str, train_records, eval_records) -> float:
    col = TARGET_COLUMNS[target]
    mean = float(np.mean([getattr(r, col) for r in train_records]))
    truth = np.array([getattr(r, col) for r in eval_records])
    err = (mean - truth) if target == "drr" else 100.0 * (mean - truth) / truth
    return quadratic_mean(err)


# ---------------------------------------------------------------- recipes

def primary_split(ws: Workspace) -> DatasetManifest:
    """The primary corpus split used by every recipe (written next to the corpus)."""
    manifest = synth_corpus(ws, "primary")
    sp = ws.cfg["split"]
    records = split_dataset(manifest.records, sp["ratios"], ws.seed, sp["stratify"])
    out = DatasetManifest(records)
    out.write_csv(ws.path("corpora", ws.corpus_key("primary"), "split.csv"))
    return out


def _usable(records, feats: FeatureSet):
    return [r for r in records if r.utterance_id in feats.paths]


def run_recipe_v1(ws: Workspace, name: str = "v1") -> dict:
    """Train one model per target on the primary corpus and evaluate on its eval split."""
    check_corpora(ws.cfg, ["primary"])
    manifest = primary_split(ws)
    feats = extract_features(ws, manifest.records)
    train, dev, ev = (_usable(manifest.split(s), feats) for s in SPLITS)
    _require(train=train, dev=dev, eval=ev)
    check_leaks({"train": {r.utterance_id for r in train}, "dev": {r.utterance_id for r in dev},
                 "eval": {r.utterance_id for r in ev}})
    labels = manifest.labels()
    out = {"reports": {}, "models": {}, "feature_stats": {"hits": feats.hits, "misses": feats.misses}}
    for target in ws.cfg["targets"]:
        model, path = train_model(ws, name, target, train, dev, feats)
        baseline = _baseline_rmsd(target, train, ev)
        report = _emit(ws, "v1", name, target, estimate(model, ev, feats), labels,
                       {"baseline_rmsd": baseline, "n_train": len(train), "n_dev": len(dev)})
        out["reports"][target] = report
        out["models"][target] = path
    return out


def _require(**splits):
    empty = [k for k, v in splits.items() if not v]
    if empty:
        raise EmptyDataset(f"empty splits: {empty}")


def _draw(pool: list, counts: dict, rng) -> dict:
    out = {}
    for tag, n in counts.items():
        recs = [r for r in pool if r.corpus == tag]
        if len(recs) < n:
            raise DataError(f"corpus {tag}: need {n} utterances, only {len(recs)} available")
        idx = np.sort(rng.choice(len(recs), size=n, replace=False))
        out[tag] = [recs[i] for i in idx]
    return out


def mixture_counts(n_train: int, mixture: dict, dev_fraction: float):
    """Per-corpus train and dev counts; dev holds ``dev_fraction`` of the train size."""
    tags = list(mixture)
    weights = [mixture[t] for t in tags]
    n_dev = round(dev_fraction * n_train)
    return (dict(zip(tags, _largest_remainder(n_train, weights))),
            dict(zip(tags, _largest_remainder(n_dev, weights))))


def run_recipe_v2(ws: Workspace) -> dict:
    """Mixed-corpus training; evaluated on the primary eval split."""
    v2 = ws.cfg["v2"]
    mix = {k: w for k, w in v2["mixture"].items() if w > 0}
    check_corpora(ws.cfg, ["primary", *mix])
    manifest = primary_split(ws)
    pools = {"primary": manifest.split("train")}
    for tag in mix:
        if tag != "primary":
            pools[tag] = synth_corpus(ws, tag).records
    n_train = v2["train_size"] or len(pools["primary"])
    tags = list(mix)
    rng = np.random.default_rng([ws.seed, 2])
    train_counts, dev_counts = mixture_counts(n_train, mix, v2["dev_fraction"])
    total = {t: train_counts[t] + dev_counts[t] for t in tags}
    drawn = _draw([r for t in tags for r in pools[t]], total, rng)
    train = [r for t in tags for r in drawn[t][: train_counts[t]]]
    dev = [r for t in tags for r in drawn[t][train_counts[t]:]]
    ev = manifest.split("eval")
    feats = extract_features(ws, train + dev + ev)
    train, dev, ev = _usable(train, feats), _usable(dev, feats), _usable(ev, feats)
    check_leaks({"train": {r.utterance_id for r in train}, "dev": {r.utterance_id for r in dev},
                 "eval": {r.utterance_id for r in ev}})
    labels = {**manifest.labels(), **{r.utterance_id: r.labels() for r in train + dev}}
    out = {"reports": {}, "models": {}, "counts": {"train": train_counts, "dev": dev_counts}}
    for target in ws.cfg["targets"]:
        model, path = train_model(ws, "v2", target, train, dev, feats)
        out["reports"][target] = _emit(ws, "v2", "v2", target, estimate(model, ev, feats), labels,
                                       {"baseline_rmsd": _baseline_rmsd(target, train, ev),
                                        "train_counts": train_counts, "dev_counts": dev_counts})
        out["models"][target] = path
    return out


def train_submodels(ws: Workspace, target: str, manifest: DatasetManifest, feats_primary: FeatureSet):
    """The four fusion inputs, in component order."""
    models = []
    for component, corpus in ws.cfg["v3"]["submodels"].items():
        if corpus == "primary":
            train = _usable(manifest.split("train"), feats_primary)
            dev = _usable(manifest.split("dev"), feats_primary)
            model, _ = train_model(ws, "v1", target, train, dev, feats_primary)
        else:
            recs = split_dataset(synth_corpus(ws, corpus).records, ws.cfg["v3"]["submodel_split"],
                                 ws.seed, stratify=True)
            feats = extract_features(ws, recs)
            train = _usable([r for r in recs if r.split == "train"], feats)
            dev = _usable([r for r in recs if r.split == "dev"], feats)
            model, _ = train_model(ws, f"v3-{component}", target, train, dev, feats)
        models.append(model)
    return models


def run_recipe_v3(ws: Workspace) -> dict:
    """Four sub-models fused by an SVR trained on the primary dev split."""
    check_corpora(ws.cfg, list(ws.cfg["v3"]["submodels"].values()))
    manifest = primary_split(ws)
    feats = extract_features(ws, manifest.records)
    dev = _usable(manifest.split("dev"), feats)
    ev = _usable(manifest.split("eval"), feats)
    check_leaks({"fit-svr": {r.utterance_id for r in dev},
                 "fit-v1": {r.utterance_id for r in manifest.split("train")},
                 "eval": {r.utterance_id for r in ev}})
    labels = manifest.labels()
    out = {"reports": {}, "individual": {}, "fused": {}}
    for target in ws.cfg["targets"]:
        models = train_submodels(ws, target, manifest, feats)
        col = TARGET_COLUMNS[target]

        def items(records):
            return [(r.utterance_id, (lambda u=r.utterance_id: feats.load(u)), getattr(r, col)) for r in records]

        train_vecs = svr.build_combiner_inputs(models, items(dev))
        eval_vecs = svr.build_combiner_inputs(models, items(ev))
        fusion, table = svr.svr_train(train_vecs, eval_vecs)
        fusion.meta.update(ws.stamp(target=target))
        svr.save_svr(ws.path("models", f"fusion-{target}.svr"), fusion)

        fused_rows = [(e.utterance_id, svr.svr_predict(fusion, e.v)) for e in eval_vecs]
        individual = {}
        for k, component in enumerate(svr.COMPONENTS):
            rows = [(e.utterance_id, e.v[k]) for e in eval_vecs]
            individual[component] = _emit(ws, "v3", component, target, rows, labels).rmsd
        report = _emit(ws, "v3", "fused", target, fused_rows, labels,
                       {"individual_rmsd": individual, "svr_grid": table})
        _write_fusion_inputs(ws.path("estimates", "v3", f"fusion-inputs-{target}.csv"), eval_vecs, fused_rows)
        out["reports"][target] = report
        out["individual"][target] = individual
        out["fused"][target] = report.rmsd
    return out


def _write_fusion_inputs(path, vecs, fused_rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["utterance_id", *svr.COMPONENTS, "target", "fused"])
        for e, (_, f) in zip(vecs, fused_rows):
            out.writerow([e.utterance_id, *(repr(float(x)) for x in e.v), repr(e.target), repr(float(f))])


RECIPES = {"v1": run_recipe_v1, "v2": run_recipe_v2, "v3": run_recipe_v3}
