"""The acquisition loop: calibrate, adapt the radius, select, label, retrain, evaluate."""

from __future__ import annotations

import csv
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from uherd import coverage, hybrids
from uherd.config import ConfigError, DataSpec, ExperimentConfig
from uherd.core import FeatureMatrix, PoolState, PreconditionError, ScheduleConfig, mark_labeled
from uherd.data import generate_blobs, generate_halfmoons, load_dataset
from uherd.kernel import KernelConfig, adapt_radius, median_pair_distance, prepare_features
from uherd.model import ClassifierSpec, TrainedModel, predict_logits, train
from uherd.uncertainty import (
    constant_uncertainty,
    default_tau_grid,
    scaled_softmax,
    select_temperature,
    uncertainty_profile,
)

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("round", "labeled_size", "method", "seed", "tau_star", "sigma_star", "test_accuracy")

# Methods whose uncertainties use the ECE-selected temperature / adapted radius
# unless the config overrides it.
_CALIBRATED_BY_DEFAULT = {"uherding", "weighted_kmeans", "badge_medoids"}
_ADAPTIVE_BY_DEFAULT = {"uherding", "weighted_kmeans", "alfamix_uherding", "badge_medoids"}


@dataclass
class RoundRecord:
    round: int
    labeled_size: int
    method: str
    seed: int
    tau_star: float
    sigma_star: float
    selected: list = field(default_factory=list)
    test_accuracy: float = math.nan
    delta_acc_vs_random: float = math.nan


def derive_rng(seed: int, round_index: int, tag: str) -> np.random.Generator:
    """Independent stream per (experiment seed, round, purpose)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(round_index),
                                                         zlib.crc32(tag.encode())]))


def build_dataset(spec: DataSpec, seed: int, tag: str) -> tuple[FeatureMatrix, np.ndarray]:
    rng = derive_rng(spec.seed if spec.seed is not None else seed, 0, tag)
    if spec.kind == "halfmoons":
        return generate_halfmoons(spec.n, spec.noise, rng)
    if spec.kind == "blobs":
        return generate_blobs(spec.centers, spec.per_center, spec.std, rng)
    feats, labels = load_dataset(spec.features, spec.labels)
    return feats, labels


def evaluate_accuracy(model: TrainedModel, features, labels) -> float:
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise PreconditionError("empty test set")
    pred = np.argmax(predict_logits(model, features), axis=1)
    return float(np.mean(pred == labels))


def validation_split(labeled: np.ndarray, labels: np.ndarray, fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random (stratified where possible) train/validation split of the labeled set.

    The validation part holds ``round(fraction * n)`` points, at least one and
    at most ``n - 1``. Stratification applies when every class present has at
    least two labeled points.
    """
    labeled = np.asarray(labeled)
    n = labeled.size
    n_val = min(max(int(round(fraction * n)), 1), n - 1)
    classes, counts = np.unique(labels, return_counts=True)
    if np.all(counts >= 2):
        # Rank points within their class by a random permutation and order
        # everything by relative rank; a prefix is then near-proportional.
        key = np.empty(n)
        for c, cnt in zip(classes, counts):
            members = np.flatnonzero(labels == c)
            key[members] = (rng.permutation(cnt) + 0.5) / cnt
        order = np.lexsort((labels, key))
    else:
        order = rng.permutation(n)
    val = np.sort(labeled[order[:n_val]])
    tr = np.sort(labeled[order[n_val:]])
    return tr, val


class Experiment:
    """State for one (config, seed) run of the acquisition loop."""

    def __init__(self, cfg: ExperimentConfig, seed: int | None = None,
                 pool: tuple[FeatureMatrix, np.ndarray] | None = None,
                 labeled: Sequence[int] = ()):
        """``pool`` overrides ``cfg.data`` (and then no test set is built)."""
        self.cfg = cfg
        self.seed = cfg.schedule.seed if seed is None else int(seed)
        self.schedule = ScheduleConfig(tuple(cfg.schedule.budgets), self.seed)
        if pool is None:
            self.features, labels = build_dataset(cfg.data, self.seed, "pool")
            self.test_features, self.test_labels = build_dataset(cfg.test, self.seed, "test")
            if self.test_features.dim != self.features.dim:
                raise ConfigError("test features and pool features have different dimensions")
            num_classes = max(int(labels.max()), int(self.test_labels.max())) + 1
        else:
            self.features, labels = pool
            self.test_features = self.test_labels = None
            num_classes = int(labels.max()) + 1
        self.state = PoolState.initial(labels, max(num_classes, 2), labeled)
        self.schedule.check_feasible(self.state.unlabeled.size)
        self.kfeat = prepare_features(self.features, KernelConfig(normalize_features=cfg.kernel.normalize))
        self.sigma_init = (cfg.kernel.sigma_init if cfg.kernel.sigma_init is not None
                           else median_pair_distance(self.kfeat, derive_rng(self.seed, 0, "sigma_init")))
        self.clf_spec = ClassifierSpec(cfg.model.poly_degree, cfg.model.l2, cfg.model.max_epochs,
                                       cfg.model.lr, cfg.model.tol, self.seed)
        self.tau_grid = default_tau_grid(cfg.uncertainty.tau_grid_min, cfg.uncertainty.tau_grid_max,
                                         cfg.uncertainty.tau_grid_count)
        method = cfg.method
        self.calibrate = (cfg.uncertainty.calibrate if cfg.uncertainty.calibrate is not None
                          else method in _CALIBRATED_BY_DEFAULT)
        self.adapt = (cfg.kernel.adapt_radius if cfg.kernel.adapt_radius is not None
                      else method in _ADAPTIVE_BY_DEFAULT)

    # -- pieces of a round ------------------------------------------------

    def _fit(self, idx: np.ndarray) -> TrainedModel:
        # Cold start: every fit begins from zero weights.
        return train(self.features.values[idx], self.state.labels[idx], self.clf_spec,
                     self.state.num_classes)

    def _temperature(self, t: int) -> tuple[float, TrainedModel | None]:
        lab = self.state.labeled
        if lab.size < 2:
            return float(self.tau_grid.max()), None
        tr, val = validation_split(lab, self.state.labels[lab], self.cfg.uncertainty.val_fraction,
                                   derive_rng(self.seed, t, "split"))
        model = self._fit(tr)
        logits = predict_logits(model, self.features.values[val])
        tau = select_temperature(logits, self.state.labels[val], self.tau_grid, self.cfg.uncertainty.ece_bins)
        return tau, model

    def _sigma(self) -> float:
        if not self.adapt:
            return float(self.sigma_init)
        return adapt_radius(self.kfeat[self.state.labeled], self.sigma_init)

    def _initial_batch(self, t: int, budget: int) -> tuple[list[int], float]:
        strategy = self.cfg.initial.strategy
        rng = derive_rng(self.seed, t, "initial")
        if strategy == "random":
            return hybrids.random_select(self.state, budget, rng), math.nan
        if strategy == "random_per_class":
            labels = self.state.labels
            by_class = [rng.permutation(np.flatnonzero(labels == c)).tolist()
                        for c in range(self.state.num_classes)]
            picks: list[int] = []
            while len(picks) < budget:
                progressed = False
                for members in by_class:
                    if members and len(picks) < budget:
                        picks.append(int(members.pop(0)))
                        progressed = True
                if not progressed:
                    break
            return picks, math.nan
        cfg = KernelConfig(sigma=self.sigma_init)
        picks, _ = coverage.maxherding_select(self.state, self.kfeat, cfg, budget,
                                              eval_set=self.cfg.coverage.eval_set, lazy=self.cfg.coverage.lazy)
        return picks, math.nan

    def select(self, t: int, budget: int) -> tuple[list[int], float, float]:
        """Pick the next batch; returns ``(indices, tau_star, sigma_star)``.

        ``sigma_star`` is the kernel radius used, or NaN when adaptation is on
        but fewer than two points are labeled (the kernel then uses ``sigma_init``).
        """
        if self.state.labeled.size == 0:
            picks, sigma = self._initial_batch(t, budget)
            return picks, math.nan, sigma

        method = self.cfg.method
        ucfg = self.cfg.uncertainty
        n = self.state.pool_size
        if method == "random":
            return hybrids.random_select(self.state, budget, derive_rng(self.seed, t, "select")), math.nan, math.nan
        if method == "coreset":
            return hybrids.kcenter_greedy(self.state, self.kfeat, budget), math.nan, math.nan

        tau = math.nan
        unc_model = split_model = None
        if self.calibrate:
            tau, split_model = self._temperature(t)
        if ucfg.model_source == "train" and split_model is not None:
            # Uncertainties come from the same model the temperature was fitted to.
            unc_model = split_model
        elif method != "maxherding":
            unc_model = self._fit(self.state.labeled)
        scale = tau if self.calibrate else 1.0

        def predictions():
            return scaled_softmax(predict_logits(unc_model, self.features.values), scale)

        if method in ("confidence", "margin", "entropy"):
            prof = uncertainty_profile(predictions(), method)
            return hybrids.top_uncertainty_select(self.state, prof, budget), tau, math.nan

        sigma = self._sigma()
        kcfg = KernelConfig(sigma=sigma)
        eval_set = self.cfg.coverage.eval_set
        lazy = self.cfg.coverage.lazy
        if method == "maxherding":
            picks, _ = coverage.maxherding_select(self.state, self.kfeat, kcfg, budget, eval_set=eval_set, lazy=lazy)
        elif method == "uherding":
            prof = (constant_uncertainty(n, 1.0) if ucfg.measure == "constant"
                    else uncertainty_profile(predictions(), ucfg.measure))
            picks, _ = coverage.uherding_select(self.state, self.kfeat, kcfg, prof, budget,
                                                eval_set=eval_set, lazy=lazy)
        elif method == "weighted_kmeans":
            params = self.cfg.method_params.weighted_kmeans
            keep = params.keep if params.keep is not None else math.ceil(params.keep_fraction * n)
            keep = min(max(keep, budget), n)
            prof = uncertainty_profile(predictions(), ucfg.measure if ucfg.measure != "constant" else "margin")
            picks = hybrids.weighted_kmeans_select(self.state, self.kfeat, kcfg, prof, keep, budget,
                                                   eval_set=eval_set)
        elif method == "alfamix_uherding":
            params = self.cfg.method_params.alfamix_uherding
            alpha = np.round(np.arange(1, 10) / 10, 1) if params.use_grid else params.alpha
            preds = scaled_softmax(predict_logits(unc_model, self.features.values), 1.0)
            anchors = hybrids.class_anchors(self.features, self.state)
            prof = hybrids.alfamix_uncertainty(self.features, preds, anchors, alpha,
                                               lambda z: predict_logits(unc_model, z))
            picks, _ = coverage.uherding_select(self.state, self.kfeat, kcfg, prof, budget,
                                                eval_set=eval_set, lazy=lazy)
        elif method == "badge_medoids":
            picks = hybrids.badge_medoids_select(self.state, self.kfeat, kcfg, predictions(), budget, eval_set)
        else:  # pragma: no cover - guarded by config validation
            raise ConfigError(f"unknown method {method!r}")
        fallback = self.adapt and self.state.labeled.size < 2
        return picks, tau, (math.nan if fallback else sigma)

    def run(self) -> list[RoundRecord]:
        if self.test_features is None:
            raise ConfigError("a test set is required to run the full loop")
        records = []
        for t, budget in enumerate(self.schedule.budgets):
            picks, tau, sigma = self.select(t, budget)
            self.state = mark_labeled(self.state, picks)
            model = self._fit(self.state.labeled)
            acc = evaluate_accuracy(model, self.test_features, self.test_labels)
            rec = RoundRecord(t, int(self.state.labeled.size), self.cfg.method, self.seed,
                              float(tau), float(sigma), [int(i) for i in picks], acc)
            log.debug("round %d: |L|=%d tau*=%s sigma*=%s acc=%.4f", t, rec.labeled_size, tau, sigma, acc)
            records.append(rec)
        return records


def run_experiment(cfg: ExperimentConfig, seed: int | None = None) -> list[RoundRecord]:
    return Experiment(cfg, seed).run()


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def indices_path(path) -> Path:
    return Path(path).with_suffix(".indices")


def emit_results(records: Sequence[RoundRecord], path) -> Path:
    """Write the per-round CSV plus a sibling ``.indices`` file (one round per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in records:
            writer.writerow([_fmt(getattr(r, c)) for c in RESULT_COLUMNS])
    with indices_path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(" ".join(str(i) for i in r.selected) + "\n")
    return path


def read_results(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(RESULT_COLUMNS):
        raise PreconditionError(f"{path}: unexpected columns {list(rows[0])}")
    return rows


def delta_accuracy(method_rows: list[dict], random_rows: list[dict]) -> list[dict]:
    """Join a method's results with Random's on (seed, round) and subtract accuracies."""
    baseline = {(r["seed"], r["round"]): r for r in random_rows}
    out = []
    for r in method_rows:
        key = (r["seed"], r["round"])
        if key not in baseline:
            raise PreconditionError(f"no random-baseline row for seed {key[0]} round {key[1]}")
        b = baseline[key]
        if b["labeled_size"] != r["labeled_size"]:
            raise PreconditionError(f"labeled sizes differ for seed {key[0]} round {key[1]}")
        acc, racc = float(r["test_accuracy"]), float(b["test_accuracy"])
        out.append({"round": r["round"], "labeled_size": r["labeled_size"], "method": r["method"],
                    "seed": r["seed"], "test_accuracy": repr(acc), "random_accuracy": repr(racc),
                    "delta_acc": repr(acc - racc)})
    return out
