"""End-to-end stages: prepare -> train -> evaluate -> report, plus corrupt.

Every stage reads a single JSON config (``PipelineConfig``) and writes
under ``output_dir``::

    prepare/<dim>/split.csv           id,partition (fit/val/test/dropped)
    train/<dim>/{preprocess,edrl,mea,forest}.json, grid.csv
    evaluate/<dim>/baseline_forest.json, baseline_grid.csv
    reports/report_<corpus>.csv, table_<corpus>.txt, conditions.csv
    manifest.json                     config hash, per-stage outputs + hashes

Relative paths in the config resolve against the config file's directory.
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    DEFAULT_LAMBDA,
    CenterScaleStats,
    Dimension,
    SplitSpec,
    center_scale_apply,
    center_scale_fit,
    labels_for,
    load_feature_table,
    make_dataset,
    read_split_manifest,
    split_train_test,
    split_validation,
    undersample_majority,
    write_split_manifest,
)
from .edrl import EdrlConfig, EdrlModel, build_edrl, embed, train_edrl
from .errors import ConfigError, StageOrder, ValidationError
from .evaluation import EvalReport, build_report, f1_binary
from .forest import GridSpec, RandomForestModel, fit_forest, grid_search, write_score_table
from .mea import MbplsConfig, MbplsModel, explained_variance, fit_mbpls, predict
from .noise import SNR_LEVELS, corrupt_testset

ENVIRONMENTS = ("CLEAN", "NOISY")
CORPORA = ("intra", "inter")


@dataclass
class ConditionSpec:
    path: str
    corpus: str = "intra"
    environment: str = "CLEAN"
    noise_id: str | None = None
    snr_db: float | None = None
    labels_from: str | None = None

    def __post_init__(self):
        self.corpus = self.corpus.lower()
        self.environment = self.environment.upper()
        if self.snr_db is not None:
            self.snr_db = float(self.snr_db)


@dataclass
class PipelineConfig:
    train_table: str
    output_dir: str = "run"
    seed: int = 0
    feature_dim: int = 88
    dimensions: list = field(default_factory=lambda: ["A", "V"])
    rating_threshold: float = DEFAULT_LAMBDA
    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.1
    group_column: str | None = None
    standardize: bool = True
    averaging: str = "MACRO"
    snr_levels: list = field(default_factory=lambda: list(SNR_LEVELS))
    edrl: dict = field(default_factory=dict)
    mbpls: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    test_sets: list = field(default_factory=list)
    corruption: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d, base_dir=".") -> "PipelineConfig":
        known = set(cls.__dataclass_fields__) - {"base_dir"}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        missing = [k for k in ("train_table", "seed") if k not in d]
        if missing:
            raise ConfigError(f"missing required config field(s): {', '.join(missing)}")
        cfg = cls(**{k: v for k, v in d.items() if k in known}, base_dir=str(base_dir))
        cfg.test_sets = [t if isinstance(t, ConditionSpec) else ConditionSpec(**t)
                         for t in cfg.test_sets]
        return cfg

    @classmethod
    def load(cls, path, seed: int | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if seed is not None:
            data["seed"] = seed
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out(self) -> Path:
        return self.resolve(self.output_dir)

    def edrl_config(self) -> EdrlConfig:
        return EdrlConfig(**{**self.edrl, "seed": self.seed})

    def mbpls_config(self) -> MbplsConfig:
        return MbplsConfig(**self.mbpls)

    def grid(self) -> GridSpec:
        if self.forest.get("full_grid"):
            return GridSpec.full()
        kwargs = {}
        if "n_estimators" in self.forest:
            kwargs["n_estimators_values"] = list(self.forest["n_estimators"])
        if "max_depth" in self.forest:
            kwargs["max_depth_values"] = list(self.forest["max_depth"])
        return GridSpec(**kwargs)

    def validate(self) -> list:
        """All problems found, without stopping at the first one."""
        problems = []
        if not self.resolve(self.train_table).is_file():
            problems.append(f"train_table not found: {self.train_table}")
        for t in self.test_sets:
            if not self.resolve(t.path).is_file():
                problems.append(f"test set not found: {t.path}")
            if t.labels_from and not self.resolve(t.labels_from).is_file():
                problems.append(f"labels_from not found: {t.labels_from}")
            if t.corpus not in CORPORA:
                problems.append(f"test set {t.path}: corpus must be intra or inter")
            if t.environment not in ENVIRONMENTS:
                problems.append(f"test set {t.path}: environment must be CLEAN or NOISY")
            if t.environment == "NOISY" and (t.noise_id is None or t.snr_db is None):
                problems.append(f"test set {t.path}: noisy sets need noise_id and snr_db")
        for d in self.dimensions:
            try:
                Dimension.parse(d)
            except ValidationError as exc:
                problems.append(str(exc))
        if not isinstance(self.seed, int):
            problems.append("seed must be an integer")
        for name, builder in (("edrl", self.edrl_config), ("mbpls", self.mbpls_config),
                              ("forest", self.grid)):
            try:
                builder()
            except (TypeError, ValidationError) as exc:
                problems.append(f"{name}: {exc}")
        if self.averaging.upper() not in ("MACRO", "WEIGHTED", "PER_CLASS"):
            problems.append(f"unknown averaging mode {self.averaging!r}")
        return problems

    def check(self) -> None:
        problems = self.validate()
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _update_manifest(cfg: PipelineConfig, stage: str, outputs, seconds: float,
                     status: str = "ok", extra=None) -> None:
    path = cfg.out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    if manifest.get("config_hash") != cfg.config_hash():
        manifest = {"config_hash": cfg.config_hash(), "stages": {}}
    manifest["versions"] = {"edrl_mea": __version__, "numpy": np.__version__,
                            "python": platform.python_version()}
    manifest["stages"][stage] = {
        "status": status,
        "seconds": round(seconds, 3),
        "outputs": {str(Path(p).relative_to(cfg.out)): sha256_file(p)
                    for p in outputs if Path(p).exists()},
        **(extra or {}),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


class _Stage:
    """Times a stage and records it (also on failure) in the run manifest."""

    def __init__(self, cfg, name):
        self.cfg, self.name, self.outputs, self.extra = cfg, name, [], {}

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "ok" if exc_type is None else f"failed: {exc_type.__name__}: {exc}"
        if exc_type is None or self.cfg.out.exists():
            _update_manifest(self.cfg, self.name, self.outputs,
                             time.perf_counter() - self.start, status, self.extra)
        return False


def _dim_dirs(cfg, dim):
    d = Dimension.parse(dim).value
    return cfg.out / "prepare" / d, cfg.out / "train" / d, cfg.out / "evaluate" / d


# ----------------------------------------------------------------------------- prepare

def cmd_prepare(cfg: PipelineConfig) -> dict:
    """Split, rebalance and write one partition manifest per dimension."""
    cfg.check()
    table = load_feature_table(cfg.resolve(cfg.train_table), cfg.feature_dim)
    groups = None
    if cfg.group_column:
        groups = getattr(table, cfg.group_column, None)
        if groups is None:
            raise ConfigError(f"train table has no {cfg.group_column!r} column")
    spec = SplitSpec(cfg.train_fraction, cfg.validation_fraction_of_train, cfg.seed)
    summary = {}
    with _Stage(cfg, "prepare") as stage:
        for dim in cfg.dimensions:
            ds = make_dataset(table, dim, cfg.rating_threshold)
            train, test = split_train_test(ds, spec, groups)
            balanced = undersample_majority(train, cfg.seed)
            bal_groups = None
            if groups is not None:
                bal_groups = [groups[i] for i in table.index_of(balanced.ids)]
            fit, val = split_validation(balanced, spec, bal_groups)
            part = {i: "test" for i in test.ids}
            part.update({i: "dropped" for i in train.ids})
            part.update({i: "fit" for i in fit.ids})
            part.update({i: "val" for i in val.ids})
            path = _dim_dirs(cfg, dim)[0] / "split.csv"
            write_split_manifest(path, table.ids, [part[i] for i in table.ids])
            stage.outputs.append(path)
            summary[Dimension.parse(dim).value] = {
                "fit": len(fit), "val": len(val), "test": len(test),
                "dropped": len(train) - len(balanced),
                "train_counts": train.class_counts(), "balanced_counts": balanced.class_counts()}
        stage.extra["summary"] = summary
    return summary


# ----------------------------------------------------------------------------- train

@dataclass
class TrainedDimension:
    dimension: str
    stats: CenterScaleStats | None
    edrl: EdrlModel
    mea: MbplsModel
    forest: RandomForestModel
    best: dict
    grid_table: list
    fit_ids: list
    val_ids: list
    fit_embeddings: list = field(default_factory=list)


def _load_partitions(cfg, dim):
    path = _dim_dirs(cfg, dim)[0] / "split.csv"
    if not path.exists():
        raise StageOrder(f"missing {path}; run 'prepare' first")
    return read_split_manifest(path)


def _features_labels(table, ids, dim, cfg):
    idx = table.index_of(ids)
    sub = table.take(idx)
    return sub.features, labels_for(sub, dim, cfg.rating_threshold)


def _standardize(stats, x):
    return x if stats is None else center_scale_apply(stats, x)


def aligned_embedding(edrl_model: EdrlModel, mea_model: MbplsModel, stats, x):
    """Raw features -> standardise -> every EDRL block -> MBPLS prediction."""
    return predict(mea_model, embed(edrl_model, _standardize(stats, x)))


def train_dimension(cfg: PipelineConfig, dim, table=None) -> TrainedDimension:
    parts = _load_partitions(cfg, dim)
    table = table or load_feature_table(cfg.resolve(cfg.train_table), cfg.feature_dim)
    fit_ids, val_ids = parts.get("fit", []), parts.get("val", [])
    x_fit, y_fit = _features_labels(table, fit_ids, dim, cfg)
    x_val, y_val = _features_labels(table, val_ids, dim, cfg)

    stats = center_scale_fit(x_fit) if cfg.standardize else None
    s_fit, s_val = _standardize(stats, x_fit), _standardize(stats, x_val)
    classes = np.unique(y_fit)
    ecfg = cfg.edrl_config()
    model = build_edrl(table.N, len(classes), ecfg)
    train_edrl(model, [s_fit[y_fit == c] for c in classes],
               [s_val[y_val == c] for c in classes], ecfg)

    fit_blocks = embed(model, s_fit)
    mea = fit_mbpls(fit_blocks, s_fit, cfg.mbpls_config())
    xp_fit = predict(mea, fit_blocks)
    xp_val = predict(mea, embed(model, s_val))
    best, table_rows = grid_search(xp_fit, y_fit, xp_val, y_val, cfg.grid(), cfg.seed)
    forest = fit_forest(np.vstack([xp_fit, xp_val]), np.concatenate([y_fit, y_val]),
                        best["n_estimators"], best["max_depth"], cfg.seed)
    return TrainedDimension(Dimension.parse(dim).value, stats, model, mea, forest, best,
                            table_rows, fit_ids, val_ids, fit_blocks)


def cmd_train(cfg: PipelineConfig) -> dict:
    """EDRL -> embed fit rows -> MBPLS (response = standardised fit features)
    -> aligned embedding -> forest grid search and final fit."""
    cfg.check()
    for dim in cfg.dimensions:
        _load_partitions(cfg, dim)
    table = load_feature_table(cfg.resolve(cfg.train_table), cfg.feature_dim)
    results = {}
    with _Stage(cfg, "train") as stage:
        for dim in cfg.dimensions:
            td = train_dimension(cfg, dim, table)
            out = _dim_dirs(cfg, dim)[1]
            out.mkdir(parents=True, exist_ok=True)
            paths = {
                "preprocess": out / "preprocess.json",
                "edrl": out / "edrl.json",
                "mea": out / "mea.json",
                "forest": out / "forest.json",
                "grid": out / "grid.csv",
            }
            paths["preprocess"].write_text(json.dumps(
                {"standardize": td.stats is not None,
                 "stats": td.stats.to_dict() if td.stats is not None else None}))
            td.edrl.save(paths["edrl"])
            td.mea.save(paths["mea"])
            td.forest.save(paths["forest"])
            write_score_table(paths["grid"], td.grid_table)
            stage.outputs.extend(paths.values())
            ev = explained_variance(td.mea)
            results[td.dimension] = {
                "best": td.best,
                "edrl_epochs": len(td.edrl.training_history) - 1,
                "edrl_best_epoch": td.edrl.best_epoch,
                "mbpls_components": td.mea.K,
                "mbpls_response_variance": float(ev["response_cumulative"][-1]),
            }
        stage.extra["summary"] = results
        stage.extra["edrl_config"] = asdict(cfg.edrl_config())
        stage.extra["mbpls_config"] = asdict(cfg.mbpls_config())
    return results


def load_trained(cfg: PipelineConfig, dim):
    out = _dim_dirs(cfg, dim)[1]
    needed = ["preprocess.json", "edrl.json", "mea.json", "forest.json"]
    missing = [n for n in needed if not (out / n).exists()]
    if missing:
        raise StageOrder(f"missing {', '.join(missing)} in {out}; run 'train' first")
    pre = json.loads((out / "preprocess.json").read_text())
    stats = CenterScaleStats.from_dict(pre["stats"]) if pre["standardize"] else None
    return (stats, EdrlModel.load(out / "edrl.json"), MbplsModel.load(out / "mea.json"),
            RandomForestModel.load(out / "forest.json"))


# ----------------------------------------------------------------------------- evaluate

@dataclass
class Condition:
    corpus: str
    environment: str
    noise_id: str | None
    snr_db: float | None
    ids: list
    features: np.ndarray
    labels: np.ndarray

    @property
    def key_tail(self):
        return (self.environment, self.noise_id, self.snr_db)


def _conditions(cfg, dim, table, parts):
    test_ids = parts.get("test", [])
    x, y = _features_labels(table, test_ids, dim, cfg)
    conds = [Condition("intra", "CLEAN", None, None, list(test_ids), x, y)]
    label_cache = {}
    test_set = set(test_ids)
    for spec in cfg.test_sets:
        t = load_feature_table(cfg.resolve(spec.path), cfg.feature_dim)
        if spec.corpus == "intra":
            ids = [i for i in t.ids if i in test_set]
            if not ids:
                raise ValidationError(f"{spec.path}: no rows match the intra test partition")
        else:
            ids = list(t.ids)
        feats = t.take(t.index_of(ids)).features
        source = spec.labels_from
        if source is None and spec.corpus == "intra":
            label_table = table
        elif source is None:
            label_table = t
        else:
            if source not in label_cache:
                label_cache[source] = load_feature_table(cfg.resolve(source), cfg.feature_dim)
            label_table = label_cache[source]
        try:
            labels = labels_for(label_table.take(label_table.index_of(ids)), dim,
                                cfg.rating_threshold)
        except ValidationError as exc:
            raise ValidationError(f"{spec.path}: {exc}") from None
        conds.append(Condition(spec.corpus, spec.environment, spec.noise_id, spec.snr_db,
                               ids, feats, labels))
    return conds


def _baseline_forest(cfg, dim, table, parts):
    out = _dim_dirs(cfg, dim)[2]
    x_fit, y_fit = _features_labels(table, parts.get("fit", []), dim, cfg)
    x_val, y_val = _features_labels(table, parts.get("val", []), dim, cfg)
    best, rows = grid_search(x_fit, y_fit, x_val, y_val, cfg.grid(), cfg.seed)
    forest = fit_forest(np.vstack([x_fit, x_val]), np.concatenate([y_fit, y_val]),
                        best["n_estimators"], best["max_depth"], cfg.seed)
    forest.save(out / "baseline_forest.json")
    write_score_table(out / "baseline_grid.csv", rows)
    return forest, [out / "baseline_forest.json", out / "baseline_grid.csv"]


def cmd_evaluate(cfg: PipelineConfig) -> dict:
    """Score baseline (raw features -> forest) and EDRL-MEA on every condition.

    Returns ``{corpus: EvalReport}``; reports and rendered tables are written
    under ``output_dir/reports``.
    """
    cfg.check()
    trained = {d: load_trained(cfg, d) for d in cfg.dimensions}
    table = load_feature_table(cfg.resolve(cfg.train_table), cfg.feature_dim)
    results = {c: ({}, {}) for c in CORPORA}
    audit = []
    with _Stage(cfg, "evaluate") as stage:
        for dim in cfg.dimensions:
            dval = Dimension.parse(dim).value
            parts = _load_partitions(cfg, dim)
            stats, edrl_model, mea_model, forest = trained[dim]
            baseline, paths = _baseline_forest(cfg, dim, table, parts)
            stage.outputs.extend(paths)
            for cond in _conditions(cfg, dim, table, parts):
                base_pred = baseline.predict(cond.features)
                sys_pred = forest.predict(aligned_embedding(edrl_model, mea_model, stats,
                                                            cond.features))
                labels = [0, 1]
                key = (dval, *cond.key_tail)
                base, system = results[cond.corpus]
                if key in base:
                    raise ValidationError(f"duplicate test condition {key} in {cond.corpus}")
                base[key] = f1_binary(base_pred, cond.labels, cfg.averaging, labels).score
                system[key] = f1_binary(sys_pred, cond.labels, cfg.averaging, labels).score
                ids_hash = hashlib.sha256("\n".join(cond.ids).encode()).hexdigest()
                audit.append([cond.corpus, dval, cond.environment, cond.noise_id or "",
                              "" if cond.snr_db is None else f"{cond.snr_db:g}",
                              len(cond.ids), ids_hash])

        reports = {}
        rdir = cfg.out / "reports"
        rdir.mkdir(parents=True, exist_ok=True)
        titles = {"intra": "Intra-corpus performance", "inter": "Inter-corpus performance"}
        for corpus, (base, system) in results.items():
            if not base:
                continue
            report = build_report(base, system, cfg.averaging, cfg.snr_levels, titles[corpus])
            report.save_csv(rdir / f"report_{corpus}.csv")
            (rdir / f"table_{corpus}.txt").write_text(report.render())
            stage.outputs += [rdir / f"report_{corpus}.csv", rdir / f"table_{corpus}.txt"]
            reports[corpus] = report
        with (rdir / "conditions.csv").open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["corpus", "dimension", "environment", "noise_id", "snr_db",
                             "n_rows", "ids_sha256"])
            writer.writerows(audit)
        stage.outputs.append(rdir / "conditions.csv")
    return reports


def cmd_report(cfg: PipelineConfig | None = None, csv_paths=(), averaging="MACRO",
               levels=SNR_LEVELS) -> str:
    """Re-render text tables from report CSVs."""
    paths = list(csv_paths)
    if cfg is not None:
        averaging, levels = cfg.averaging, cfg.snr_levels
        paths += sorted((cfg.out / "reports").glob("report_*.csv"))
    if not paths:
        raise StageOrder("no report CSVs found; run 'evaluate' first")
    rendered = []
    for p in paths:
        corpus = Path(p).stem.replace("report_", "")
        title = {"intra": "Intra-corpus performance",
                 "inter": "Inter-corpus performance"}.get(corpus, corpus)
        rendered.append(EvalReport.load_csv(p, averaging=averaging.upper(),
                                            levels=tuple(levels), title=title).render())
    return "\n".join(rendered)


# ----------------------------------------------------------------------------- corrupt

def cmd_corrupt(cfg: PipelineConfig | None = None, clean_dir=None, noise_dir=None,
                output_dir=None, levels=None, seed=None) -> list:
    """Mix every clean WAV with every noise WAV at every SNR level."""
    opts = dict(cfg.corruption) if cfg is not None else {}
    resolve = cfg.resolve if cfg is not None else Path
    clean_dir = Path(clean_dir) if clean_dir else (resolve(opts["clean_dir"])
                                                   if "clean_dir" in opts else None)
    noise_dir = Path(noise_dir) if noise_dir else (resolve(opts["noise_dir"])
                                                   if "noise_dir" in opts else None)
    if clean_dir is None or noise_dir is None:
        raise ConfigError("corrupt needs clean_dir and noise_dir")
    if output_dir is None:
        output_dir = resolve(opts["output_dir"]) if "output_dir" in opts else \
            (cfg.out / "corrupted" if cfg is not None else Path("corrupted"))
    if levels is None:
        levels = opts.get("snr_levels", cfg.snr_levels if cfg is not None else SNR_LEVELS)
    if seed is None:
        seed = cfg.seed if cfg is not None else 0
    problems = [f"{name} not found: {d}" for name, d in
                (("clean_dir", clean_dir), ("noise_dir", noise_dir)) if not Path(d).is_dir()]
    if problems:
        raise ConfigError("; ".join(problems))
    clean = sorted(Path(clean_dir).glob("*.wav"))
    noises = sorted(Path(noise_dir).glob("*.wav"))
    if not clean or not noises:
        raise ConfigError("clean_dir and noise_dir must each contain .wav files")
    start = time.perf_counter()
    rows = corrupt_testset(clean, noises, levels, seed, output_dir)
    if cfg is not None and cfg.out.exists():
        _update_manifest(cfg, "corrupt", [Path(output_dir) / "manifest.csv"],
                         time.perf_counter() - start)
    return rows
