"""End-to-end experiment orchestration on synthetic assessments.

Glues the stages together: generate assessments, preprocess clips, extract
features, run grouped-stratified cross-validation of both classifiers,
compute the evaluation suite, and run the embedding/outlier analysis. The
command-line interface wires these functions to disk artifacts; tests call
them directly.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import features as feat
from . import forest
from . import poseproc, stats, synth
from .deepnet import ArchConfig, ConvLSTM, TrainConfig
from .deepnet import predict as net_predict
from .deepnet import train as net_train
from .io import FrameArray, ManifestRow

log = logging.getLogger("tremorkit")

TREATMENT_ARMS = ("ldopa", "dbs", "dbs_ldopa")


@dataclass
class PreparedAssessment:
    row: ManifestRow
    clip: np.ndarray | None = None          # 3,T,32,32 float32
    clip_failure: str = ""
    features: np.ndarray | None = None      # 30 values
    feature_failure: str = ""

    @property
    def key(self):
        return (self.row.assessment_id, self.row.laterality)

    @property
    def merged(self) -> int:
        return ds.merge_labels(self.row.score)


def preprocess_assessment(assessment: synth.SynthAssessment) -> tuple[np.ndarray | None, str]:
    """Clip for the pixel branch, or a failure reason."""
    seq, roi = assessment.seq, assessment.roi
    if not poseproc.assessment_usable(seq, roi):
        return None, "pose_coverage"
    try:
        h = poseproc.mean_spine_length(seq, roi)
        box = poseproc.hand_bounding_box(seq, roi, h)
        clip = poseproc.extract_clip(FrameArray(assessment.frames), roi, box,
                                     fps=seq.fps)
    except (poseproc.NoValidFrames, poseproc.EmptyIntersection) as exc:
        return None, type(exc).__name__
    return clip.data, ""


def extract_features(assessment: synth.SynthAssessment) -> tuple[np.ndarray | None, str]:
    """Feature vector for the pose-reliant branch, or a failure reason."""
    try:
        vec = feat.feature_vector(assessment.seq, assessment.roi)
    except feat.PoseFailure as exc:
        return None, exc.keypoint
    except feat.TooShort:
        return None, "too_short"
    return vec, ""


def prepare_plan(plan: synth.AssessmentPlan) -> PreparedAssessment:
    assessment = synth.gen_assessment(plan.spec)
    clip, clip_fail = preprocess_assessment(assessment)
    vec, feat_fail = extract_features(assessment)
    return PreparedAssessment(row=plan.row, clip=clip, clip_failure=clip_fail,
                              features=vec, feature_failure=feat_fail)


def prepare_dataset(plans, jobs: int = 1) -> list[PreparedAssessment]:
    if jobs <= 1:
        return [prepare_plan(p) for p in plans]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(prepare_plan, plans, chunksize=8))


# ------------------------------------------------------------------ training

@dataclass
class FoldResult:
    fold: int
    net_kappa: float
    rfc_kappa: float
    net_survivors: int
    rfc_survivors: int
    net_test_total: int
    rfc_test_total: int
    net_preds: dict = field(default_factory=dict)   # key -> (class, probs, embedding)
    rfc_preds: dict = field(default_factory=dict)   # key -> (class, probs)
    net_history: list = field(default_factory=list)
    net_state: dict | None = None


@dataclass
class CvResult:
    folds: list[FoldResult]
    fold_assignment: ds.FoldAssignment
    items: list[PreparedAssessment]

    def pooled_net(self):
        return {k: v for f in self.folds for k, v in f.net_preds.items()}

    def pooled_rfc(self):
        return {k: v for f in self.folds for k, v in f.rfc_preds.items()}


def _net_usable(items):
    return [a for a in items if a.clip is not None]


def _rfc_usable(items):
    return [a for a in items if a.features is not None]


def run_fold(items, assignment: ds.FoldAssignment, fold: int,
             arch: ArchConfig, train_cfg: TrainConfig,
             forest_cfg: forest.ForestConfig | None = None,
             seed: int = 0, keep_state: bool = False,
             train_rfc: bool = True) -> FoldResult:
    """Train and evaluate both branches on one cross-validation fold."""
    rows = [a.row for a in items]
    by_key = {a.key: a for a in items}
    train_rows, val_rows, test_rows = assignment.roles(rows, fold)

    def pick(role_rows):
        return [by_key[(r.assessment_id, r.laterality)] for r in role_rows]

    train_items, val_items, test_items = pick(train_rows), pick(val_rows), pick(test_rows)

    # ------------------------------------------------------------ pixel branch
    net_train_items = _net_usable(train_items)
    net_val_items = _net_usable(val_items)
    net_test_items = _net_usable(test_items)
    over_rows = ds.oversample([a.row for a in net_train_items],
                              seed=_fold_seed(seed, fold, "oversample"))
    net_lookup = {a.key: a for a in net_train_items}
    train_clips = [net_lookup[(r.assessment_id, r.laterality)].clip for r in over_rows]
    train_labels = [ds.merge_labels(r.score) for r in over_rows]

    model = ConvLSTM(arch, seed=_fold_seed(seed, fold, "init"))
    cfg = TrainConfig(**{**train_cfg.__dict__, "seed": _fold_seed(seed, fold, "train")})
    result = net_train(model, train_clips, train_labels,
                       [a.clip for a in net_val_items],
                       [a.merged for a in net_val_items], cfg)

    net_preds = {}
    if net_test_items:
        classes, probs, embeds = net_predict(model, [a.clip for a in net_test_items])
        for a, c, p, e in zip(net_test_items, classes, probs, embeds):
            net_preds[a.key] = (int(c), p, e)
    net_truth = [a.merged for a in net_test_items]
    net_kappa = stats.weighted_kappa(stats.confusion_matrix(
        net_truth, [net_preds[a.key][0] for a in net_test_items], 4)) \
        if net_test_items else float("nan")

    # ------------------------------------------------------------- pose branch
    rfc_kappa = float("nan")
    rfc_preds = {}
    rfc_test_items = _rfc_usable(test_items)
    if train_rfc:
        rfc_train_items = _rfc_usable(train_items)
        over_rfc = ds.oversample([a.row for a in rfc_train_items],
                                 seed=_fold_seed(seed, fold, "oversample_rfc"))
        rfc_lookup = {a.key: a for a in rfc_train_items}
        X = np.array([rfc_lookup[(r.assessment_id, r.laterality)].features
                      for r in over_rfc])
        y = np.array([ds.merge_labels(r.score) for r in over_rfc])
        rfc_model = forest.fit(X, y, forest_cfg or forest.ForestConfig(),
                               seed=_fold_seed(seed, fold, "forest"))
        if rfc_test_items:
            probs = forest.predict_proba(rfc_model,
                                         np.array([a.features for a in rfc_test_items]))
            for a, p in zip(rfc_test_items, probs):
                rfc_preds[a.key] = (int(np.argmax(p)), p)
            rfc_kappa = stats.weighted_kappa(stats.confusion_matrix(
                [a.merged for a in rfc_test_items],
                [rfc_preds[a.key][0] for a in rfc_test_items], 4))

    return FoldResult(
        fold=fold, net_kappa=float(net_kappa), rfc_kappa=float(rfc_kappa),
        net_survivors=len(net_test_items), rfc_survivors=len(rfc_test_items),
        net_test_total=len(test_items), rfc_test_total=len(test_items),
        net_preds=net_preds, rfc_preds=rfc_preds,
        net_history=result.history,
        net_state=model.get_state() if keep_state else None)


def _fold_seed(seed: int, fold: int, tag: str) -> int:
    from .rng import seed_for

    return seed_for(seed, "fold", fold, tag)


def run_cv(items, arch: ArchConfig, train_cfg: TrainConfig,
           forest_cfg: forest.ForestConfig | None = None, k: int = 5,
           seed: int = 0, folds=None, keep_state: bool = False,
           train_rfc: bool = True) -> CvResult:
    assignment = ds.make_folds([a.row for a in items], k=k, seed=seed)
    results = []
    for fold in (range(k) if folds is None else folds):
        log.info("fold %d: training", fold)
        results.append(run_fold(items, assignment, fold, arch, train_cfg,
                                forest_cfg, seed=seed, keep_state=keep_state,
                                train_rfc=train_rfc))
        log.info("fold %d: net kappa %.3f rfc kappa %.3f", fold,
                 results[-1].net_kappa, results[-1].rfc_kappa)
    return CvResult(folds=results, fold_assignment=assignment, items=list(items))


# ---------------------------------------------------------------- evaluation

def _binary_scores(probs: np.ndarray, threshold: int) -> float:
    """Score for the binary split 'severity >= threshold' from merged-class
    probabilities."""
    return float(probs[threshold:].sum())


def evaluation_report(cv: CvResult) -> dict:
    """The pooled-test-set evaluation suite over a finished cross-validation."""
    by_key = {a.key: a for a in cv.items}
    net = cv.pooled_net()
    rfc = cv.pooled_rfc()

    report: dict = {"folds": [], "n_assessments": len(cv.items)}
    for f in cv.folds:
        report["folds"].append({
            "fold": f.fold, "net_kappa": f.net_kappa, "rfc_kappa": f.rfc_kappa,
            "net_survivors": f.net_survivors, "rfc_survivors": f.rfc_survivors,
            "test_total": f.net_test_total,
        })

    truth_m = [by_key[k].merged for k in net]
    preds_m = [net[k][0] for k in net]
    cm4 = stats.confusion_matrix(truth_m, preds_m, 4)
    report["net"] = {
        "kappa_merged": stats.weighted_kappa(cm4),
        "balanced_accuracy": stats.balanced_accuracy(cm4),
        "confusion_merged": cm4.tolist(),
        "n": len(preds_m),
    }
    # five-class view: merged predictions read as score 3, truth unmerged
    truth5 = [by_key[k].row.score for k in net]
    cm5 = stats.confusion_matrix(truth5, [net[k][0] for k in net], 5)
    report["net"]["kappa_full_range"] = stats.weighted_kappa(cm5)
    report["net"]["confusion_full"] = cm5.tolist()

    if rfc:
        rt = [by_key[k].merged for k in rfc]
        rp = [rfc[k][0] for k in rfc]
        rcm = stats.confusion_matrix(rt, rp, 4)
        report["rfc"] = {
            "kappa_merged": stats.weighted_kappa(rcm),
            "balanced_accuracy": stats.balanced_accuracy(rcm),
            "confusion_merged": rcm.tolist(),
            "n": len(rp),
        }

    # binary severity thresholds on the pixel branch
    report["binary"] = []
    for threshold, label in stats.BINARY_SPLITS:
        labels = np.array([1 if by_key[k].row.score >= threshold else 0 for k in net])
        scores = np.array([_binary_scores(net[k][1], threshold) for k in net])
        if labels.min() == labels.max():
            report["binary"].append({"task": label, "auc": float("nan"),
                                     "sensitivity_at_95_specificity": float("nan"),
                                     "roc": []})
            continue
        curve = stats.roc_auc(scores, labels)
        report["binary"].append({
            "task": label,
            "auc": curve.auc,
            "sensitivity_at_95_specificity": stats.sensitivity_at_specificity(curve),
            "roc": [(float(fp), float(tp), float(th))
                    for fp, tp, th in zip(curve.fpr, curve.tpr, curve.thresholds)],
        })

    # lateral asymmetry over exams where both sides survived
    pairs = {}
    for (aid, lat) in net:
        pairs.setdefault(aid, {})[lat] = (by_key[(aid, lat)].merged,
                                          net[(aid, lat)][0])
    truth_asym, pred_asym = [], []
    for aid, sides in pairs.items():
        if "left" in sides and "right" in sides:
            truth_asym.append(stats.asymmetry_label(sides["left"][0], sides["right"][0]))
            pred_asym.append(stats.asymmetry_label(sides["left"][1], sides["right"][1]))
    if truth_asym:
        classes = {c: i for i, c in enumerate(stats.ASYMMETRY_CLASSES)}
        cm3 = stats.confusion_matrix([classes[c] for c in truth_asym],
                                     [classes[c] for c in pred_asym], 3)
        report["asymmetry"] = {"kappa": stats.weighted_kappa(cm3),
                               "confusion": cm3.tolist(),
                               "classes": list(stats.ASYMMETRY_CLASSES),
                               "n_pairs": len(truth_asym)}

    # model comparison over folds (pixel model beating the pose model)
    valid = [f for f in cv.folds if np.isfinite(f.rfc_kappa)]
    wins = sum(1 for f in valid if f.net_kappa > f.rfc_kappa)
    if valid:
        test = stats.binomial_test_one_sided(wins, len(valid))
        report["model_comparison"] = {"wins": wins, "folds": len(valid),
                                      "statistic": test.statistic,
                                      "p_value": test.p_value}
    return report


# ----------------------------------------------------------------- treatment

def treatment_improvements(rows, scores: dict) -> dict[str, dict[str, float]]:
    """Per-patient relative improvement per arm from an (id, lat) -> score map.

    Patients without baseline tremor are excluded.
    """
    patients: dict[str, dict[str, float]] = {}
    for r in rows:
        s = scores.get((r.assessment_id, r.laterality))
        if s is None:
            continue
        patients.setdefault(r.patient_id, {})[r.treatment or "baseline"] = float(s)
    out: dict[str, dict[str, float]] = {arm: {} for arm in TREATMENT_ARMS}
    for pid, arms in patients.items():
        base = arms.get("baseline")
        if base is None or base < 1:
            continue
        for arm in TREATMENT_ARMS:
            if arm in arms:
                out[arm][pid] = stats.treatment_improvement(base, arms[arm])
    return out


def treatment_tables(rows, clinician_scores: dict, model_scores: dict | None) -> dict:
    """Pairwise arm comparisons per rater plus rater-agreement tests,
    Bonferroni-corrected over all nine comparisons."""
    raters = {"clinician": treatment_improvements(rows, clinician_scores)}
    if model_scores is not None:
        raters["model"] = treatment_improvements(rows, model_scores)

    between_treatments = []
    pair_order = [("ldopa", "dbs"), ("ldopa", "dbs_ldopa"), ("dbs", "dbs_ldopa")]
    for rater, improvements in raters.items():
        for arm_x, arm_y in pair_order:
            common = sorted(set(improvements[arm_x]) & set(improvements[arm_y]))
            x = [improvements[arm_x][p] for p in common]
            y = [improvements[arm_y][p] for p in common]
            try:
                res = stats.wilcoxon_signed_rank(x, y, alternative="greater")
            except stats.AllZeroDifferences:
                res = stats.TestResult(statistic=float("nan"), p_value=1.0, n=0)
            res.label = f"{rater}:{arm_x}-vs-{arm_y}"
            between_treatments.append(res)

    between_raters = []
    if model_scores is not None:
        for arm in TREATMENT_ARMS:
            common = sorted(set(raters["clinician"][arm]) & set(raters["model"][arm]))
            x = [raters["clinician"][arm][p] for p in common]
            y = [raters["model"][arm][p] for p in common]
            try:
                res = stats.wilcoxon_signed_rank(x, y, alternative="two_sided")
            except stats.AllZeroDifferences:
                res = stats.TestResult(statistic=0.0, p_value=1.0, n=len(x))
            res.label = f"raters:{arm}"
            between_raters.append(res)

    stats.bonferroni(between_treatments + between_raters, n_comparisons=9)
    mean_improvement = {
        rater: {arm: (float(np.mean(list(vals.values()))) if vals else float("nan"))
                for arm, vals in improvements.items()}
        for rater, improvements in raters.items()
    }
    return {"between_treatments": between_treatments,
            "between_raters": between_raters,
            "mean_improvement": mean_improvement}


# ------------------------------------------------------------------ embedding

def embedding_analysis(items, preds: dict, seed: int = 0,
                       perplexity: float = 50.0, early_exaggeration: float = 30.0,
                       contamination: float = 0.05) -> dict:
    """t-SNE of the pixel-model embeddings plus per-class outlier flags."""
    from . import embed as emb

    keys = [a.key for a in items if a.key in preds]
    X = np.array([preds[k][2] for k in keys])
    labels = np.array([a.merged for a in items if a.key in preds])
    res = emb.tsne(X, perplexity=perplexity,
                   early_exaggeration=early_exaggeration, seed=seed)
    envelopes = {}
    for c in np.unique(labels):
        pts = res.coords[labels == c]
        if len(pts) >= 10:
            envelopes[int(c)] = emb.fit_envelope(pts, class_id=int(c),
                                                 contamination=contamination)
    flagged = emb.flag_outliers(res.coords, labels, envelopes) if envelopes else []
    by_key = {a.key: a for a in items}
    outliers = [{"assessment_id": keys[o.index][0], "laterality": keys[o.index][1],
                 "class": o.class_id, "distance": o.distance,
                 "confound": by_key[keys[o.index]].row.confound}
                for o in flagged]
    return {"keys": keys, "coords": res.coords, "labels": labels,
            "kl_final": res.kl_final, "perplexity": res.perplexity,
            "envelopes": envelopes, "outliers": outliers}


def outlier_enrichment(analysis: dict, items, confound: str = "camera_shake",
                       class_id: int = 0) -> float:
    """How over-represented a confound is among one class's outliers,
    relative to its share of that class."""
    by_key = {a.key: a for a in items}
    keys = analysis["keys"]
    labels = analysis["labels"]
    class_keys = [k for k, lab in zip(keys, labels) if lab == class_id]
    if not class_keys:
        return float("nan")
    base = np.mean([by_key[k].row.confound.startswith(confound) for k in class_keys])
    out_keys = [(o["assessment_id"], o["laterality"]) for o in analysis["outliers"]
                if o["class"] == class_id]
    if not out_keys or base == 0:
        return float("nan")
    among = np.mean([by_key[k].row.confound.startswith(confound) for k in out_keys])
    return float(among / base)
