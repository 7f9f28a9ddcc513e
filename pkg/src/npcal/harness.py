"""Metrics, failure-region counts, run configuration and the end-to-end pipeline."""

from dataclasses import asdict, dataclass, field, fields, replace
import json
import time

import numpy as np

from .classifier import TrainConfig, predict, train_classifier
from .data import (
    Dataset,
    SyntheticSpec,
    generate_gaussian_mixture,
    load_dataset,
    load_idx,
    minmax_scale,
    train_test_split,
)
from .errors import PreconditionError, ShapeError, StageError
from .noise import ASN_MAPS, NoiseSpec, inject, true_transition
from .npc import NpcConfig, calibrate, calibration_matrices, fit_calibrator, iterate_npc, mix
from .prior import PriorConfig
from .transition import aux_matrices, estimate_transition, train_aux

VENN_REGIONS = "abcdefgh"


def accuracy(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ShapeError("label vectors differ in length")
    return float(np.mean(pred == true)) if pred.size else 0.0


def confusion(pred, true, n_classes):
    """Counts indexed ``[true, predicted]``."""
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (np.asarray(true), np.asarray(pred)), 1)
    return out


def venn_counts(y, noisy, pred, post):
    """Split samples by clean/noisy label, classifier hit/miss and post-processor hit/miss.

    Clean samples fill a-d and noisy samples e-h, in the order
    (miss, miss), (miss, hit), (hit, hit), (hit, miss).
    """
    arrays = [np.asarray(v) for v in (y, noisy, pred, post)]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError("all four label vectors must have the same length")
    y, noisy, pred, post = arrays
    clean = noisy == y
    hit1 = pred == y
    hit2 = post == y
    out = {}
    for offset, subset in ((0, clean), (4, ~clean)):
        cells = [(~hit1) & (~hit2), (~hit1) & hit2, hit1 & hit2, hit1 & (~hit2)]
        for i, cell in enumerate(cells):
            out[VENN_REGIONS[offset + i]] = int(np.sum(subset & cell))
    return out


def net_gain(venn):
    """(b + f) - (d + h): corrections minus regressions."""
    return (venn["b"] + venn["f"]) - (venn["d"] + venn["h"])


# --------------------------------------------------------------------------
# report


@dataclass
class EvalReport:
    accuracy_before: float
    accuracy_after: float
    confusion_before: list
    confusion_after: list
    venn_counts: dict
    t_mse: float = None
    t_estimate: list = None
    t_true: list = None
    t_exclusion_rate: float = None
    iteration_accuracies: list = None
    n_train: int = 0
    n_test: int = 0
    seeds: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)

    @property
    def net_gain(self):
        return net_gain(self.venn_counts)

    def to_dict(self, include_timings=True):
        out = asdict(self)
        if not include_timings:
            out.pop("wall_times")
        return out

    def to_json(self, include_timings=False):
        """Serialise.  Timings are left out by default so the file is reproducible."""
        return json.dumps(self.to_dict(include_timings), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def write_report(report, path, timings_path=None):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    if timings_path is not None:
        with open(timings_path, "w", encoding="utf-8") as fh:
            json.dump(report.wall_times, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # synthetic | npcd | idx
    data: str = "synthetic"
    data_path: str = None
    idx_images: str = None
    idx_labels: str = None
    idx_test_images: str = None
    idx_test_labels: str = None
    normalize: bool = False
    n_classes: int = 4
    n_samples: int = 5000
    dim: int = 16
    spread: float = 1.0
    test_fraction: float = 0.2
    noise: str = "IDN"
    noise_ratio: float = 0.4
    asn_map: str = None
    train: TrainConfig = field(default_factory=TrainConfig)
    npc: NpcConfig = field(default_factory=NpcConfig)
    npc_iterations: int = 1
    estimate_t: bool = False


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}

# flat key -> (section, field, parser); section None means RunConfig itself
_KEYS = {
    "seed": (None, "seed", int),
    "data": (None, "data", str),
    "data_path": (None, "data_path", str),
    "idx_images": (None, "idx_images", str),
    "idx_labels": (None, "idx_labels", str),
    "idx_test_images": (None, "idx_test_images", str),
    "idx_test_labels": (None, "idx_test_labels", str),
    "normalize": (None, "normalize", lambda v: _BOOL[v.lower()]),
    "n_classes": (None, "n_classes", int),
    "n_samples": (None, "n_samples", int),
    "dim": (None, "dim", int),
    "spread": (None, "spread", float),
    "test_fraction": (None, "test_fraction", float),
    "noise": (None, "noise", str.upper),
    "noise_ratio": (None, "noise_ratio", float),
    "asn_map": (None, "asn_map", str),
    "npc_iterations": (None, "npc_iterations", int),
    "estimate_t": (None, "estimate_t", lambda v: _BOOL[v.lower()]),
    "train_epochs": ("train", "epochs", int),
    "train_lr": ("train", "learning_rate", float),
    "train_batch": ("train", "batch_size", int),
    "smoothing": ("train", "smoothing", float),
    "early_stop": ("train", "early_stop", lambda v: None if v.lower() in ("", "none") else _pair(v)),
    "npc_epochs": ("npc", "epochs", int),
    "npc_lr": ("npc", "learning_rate", float),
    "npc_batch": ("npc", "batch_size", int),
    "mc_samples": ("npc", "mc_samples", int),
    "alpha_floor": ("npc", "alpha_floor", float),
    "soft_targets": ("npc", "soft_targets", lambda v: _BOOL[v.lower()]),
    "prior_k": ("prior", "k", int),
    "prior_delta": ("prior", "delta", float),
    "prior_rho": ("prior", "rho", float),
    "prior_variant": ("prior", "variant", str.upper),
    "prior_m": ("prior", "m", int),
    "prior_threshold": ("prior", "confidence_threshold", lambda v: None if v.lower() in ("", "none") else float(v)),
    "prior_top_fraction": ("prior", "top_fraction", float),
    "prior_space": ("prior", "feature_space", str.lower),
}

CONFIG_KEYS = tuple(_KEYS)


def _pair(text):
    frac, patience = text.split(":")
    return (float(frac), int(patience))


def parse_config_text(text):
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise PreconditionError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise PreconditionError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(values, base=None):
    """Apply flat string ``values`` (from a file or flags) onto ``base``."""
    cfg = base or RunConfig()
    top, train, npc, prior = {}, {}, {}, {}
    sections = {None: top, "train": train, "npc": npc, "prior": prior}
    for key, value in values.items():
        if value is None:
            continue
        section, name, parse = _KEYS[key]
        sections[section][name] = parse(value) if isinstance(value, str) else value
    prior_cfg = replace(cfg.npc.prior, **prior)
    npc_cfg = replace(cfg.npc, prior=prior_cfg, **npc)
    train_cfg = replace(cfg.train, **train)
    return replace(cfg, train=train_cfg, npc=npc_cfg, **top)


def load_config(path, overrides=None):
    with open(path, encoding="utf-8") as fh:
        values = parse_config_text(fh.read())
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def config_echo(cfg):
    out = asdict(cfg)
    out["train"]["hidden"] = list(cfg.train.hidden)
    out["npc"]["hidden"] = list(cfg.npc.hidden)
    if cfg.train.early_stop is not None:
        out["train"]["early_stop"] = list(cfg.train.early_stop)
    return out


def parse_asn_map(text, n_classes):
    """Preset name (``mnist``, ``fmnist``, ``cifar10``) or ``src:dst,src:dst``."""
    if text is None:
        return None
    if text.lower() in ASN_MAPS:
        return dict(ASN_MAPS[text.lower()])
    out = {}
    for item in text.split(","):
        src, dst = item.split(":")
        out[int(src)] = int(dst)
    return out


STAGE_SEEDS = ("data", "split", "noise", "clean_classifier", "classifier", "npc", "aux")


def derive_seeds(seed):
    """Independent per-stage seeds from the global seed."""
    out = {}
    for i, name in enumerate(STAGE_SEEDS):
        state = np.random.SeedSequence([int(seed), i]).generate_state(2, dtype=np.uint32)
        out[name] = int(state[0]) << 32 | int(state[1])
    return out


# --------------------------------------------------------------------------
# pipeline


class _Timer:
    def __init__(self):
        self.times = {}
        self.start = time.perf_counter()

    def stage(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0
        return result


def load_data(cfg, seeds):
    """Return (train, test) datasets according to ``cfg.data``."""
    if cfg.data == "synthetic":
        spec = SyntheticSpec(cfg.n_classes, cfg.n_samples, cfg.dim, cfg.spread, seeds["data"])
        ds = generate_gaussian_mixture(spec)
        return train_test_split(ds, cfg.test_fraction, seeds["split"])
    if cfg.data == "npcd":
        if cfg.data_path is None:
            raise PreconditionError("data = npcd needs data_path")
        ds = load_dataset(cfg.data_path)
        if cfg.normalize:
            ds = Dataset(minmax_scale(ds.features), ds.n_classes, ds.true_labels)
        return train_test_split(ds, cfg.test_fraction, seeds["split"])
    if cfg.data == "idx":
        train = load_idx(cfg.idx_images, cfg.idx_labels, scale=True)
        if cfg.idx_test_images:
            test = load_idx(cfg.idx_test_images, cfg.idx_test_labels, scale=True)
            return train, test
        return train_test_split(train, cfg.test_fraction, seeds["split"])
    raise PreconditionError(f"unknown data source {cfg.data!r}")


def _noisy_train(train, cfg, seeds):
    kind = cfg.noise
    preds = None
    if kind == "SRIDN":
        clean = train.with_noisy_labels(train.true_labels)
        model = train_classifier(clean, replace(cfg.train, seed=seeds["clean_classifier"], early_stop=None))
        preds = predict(model, train.features)
    spec = NoiseSpec(kind, cfg.noise_ratio, seeds["noise"], parse_asn_map(cfg.asn_map, train.n_classes))
    outcome = inject(train, spec, preds)
    return train.with_noisy_labels(outcome.noisy_labels), outcome


def run_pipeline(cfg):
    """Data -> noise -> classifier -> prior + NPC -> calibration -> (T) -> report."""
    seeds = derive_seeds(cfg.seed)
    timer = _Timer()
    train, test = timer.stage("load_data", load_data, cfg, seeds)
    if train.true_labels is None or test.true_labels is None:
        raise StageError("load_data", PreconditionError("evaluation needs true labels"))
    train, outcome = timer.stage("inject_noise", _noisy_train, train, cfg, seeds)
    c = train.n_classes

    classifier = timer.stage(
        "train_classifier", train_classifier, train, replace(cfg.train, seed=seeds["classifier"])
    )
    train_preds = timer.stage("predict", predict, classifier, train.features)
    test_preds = timer.stage("predict", predict, classifier, test.features)

    npc_cfg = replace(cfg.npc, seed=seeds["npc"])
    npc_model, _ = timer.stage("train_npc", fit_calibrator, train.features, train_preds, npc_cfg)
    train_h = timer.stage("calibrate", calibration_matrices, npc_model, train.features)
    train_cal = timer.stage("calibrate", lambda: mix(train_h, train_preds.probs))
    test_cal = timer.stage("calibrate", calibrate, npc_model, test.features, test_preds)

    report = EvalReport(
        accuracy_before=accuracy(test_preds.labels, test.true_labels),
        accuracy_after=accuracy(test_cal.labels, test.true_labels),
        confusion_before=confusion(test_preds.labels, test.true_labels, c).tolist(),
        confusion_after=confusion(test_cal.labels, test.true_labels, c).tolist(),
        venn_counts=venn_counts(
            train.true_labels, train.noisy_labels, train_preds.labels, np.argmax(train_cal, axis=1)
        ),
        n_train=train.n,
        n_test=test.n,
        seeds=seeds,
        config=config_echo(cfg),
    )

    if cfg.npc_iterations > 1:
        stages = timer.stage(
            "iterate_npc",
            iterate_npc,
            train.features,
            train_preds,
            npc_cfg,
            cfg.npc_iterations,
            test.features,
            test_preds,
        )
        report.iteration_accuracies = [accuracy(s.labels, test.true_labels) for s in stages]

    if cfg.estimate_t:
        aux = timer.stage(
            "estimate_t",
            train_aux,
            train.features,
            train.noisy_labels,
            train_preds,
            replace(cfg.train, seed=seeds["aux"], early_stop=None),
        )
        t_true = true_transition(outcome, train.true_labels, c)
        est = timer.stage(
            "estimate_t",
            lambda: estimate_transition(
                train_h,
                train_cal,
                train_preds.probs.astype(np.float64),
                aux_matrices(aux, train.features, c),
                train.true_labels,
                t_true,
            ),
        )
        report.t_mse = est.mse
        report.t_estimate = est.aggregate.entries.tolist()
        report.t_true = t_true.entries.tolist()
        report.t_exclusion_rate = est.exclusion_rate

    timer.times["total"] = time.perf_counter() - timer.start
    report.wall_times = timer.times
    return report
