"""Tag ontology: hierarchy, mutual exclusivity, and the tagging losses.

Label vectors are int8 arrays over the ontology's tag order with entries
+1 (positive), -1 (negative) and 0 (unknown). Unknown entries contribute
zero loss; explicit negatives come from exclusivity relations.
"""

import warnings

import numpy as np

from .autodiff import Tensor, ops
from .errors import DataError

TAG_CLASSES = ("bodypart", "type", "attribute")

# Paper-scale corpora drop tags rarer than this; desk-scale synthetic runs
# pass min_count=1 instead.
DEFAULT_MIN_TAG_OCCURRENCES = 30

POSITIVE = 1
NEGATIVE = -1
UNKNOWN = 0


class TagOntology:
    def __init__(self, tags, classes, parent_edges, exclusive_pairs):
        self.tags = list(tags)
        self.index = {t: i for i, t in enumerate(self.tags)}
        if len(self.index) != len(self.tags):
            raise DataError("duplicate tag names in ontology")
        self.classes = dict(classes)
        self.parent_edges = [tuple(e) for e in parent_edges]
        self.exclusive_pairs = [tuple(e) for e in exclusive_pairs]
        self._validate()
        self._ancestors = self._transitive_ancestors()
        self._exclusive = self._exclusive_index()
        self._check_exclusive_vs_ancestors()

    def __len__(self):
        return len(self.tags)

    def _validate(self):
        for t in self.tags:
            cls = self.classes.get(t)
            if cls not in TAG_CLASSES:
                raise DataError(f"tag {t!r} has invalid class {cls!r}")
        for child, parent in self.parent_edges:
            if child not in self.index or parent not in self.index:
                raise DataError(f"parent edge ({child}, {parent}) references unknown tag")
        for a, b in self.exclusive_pairs:
            if a not in self.index or b not in self.index:
                raise DataError(f"exclusive pair ({a}, {b}) references unknown tag")
            if a == b:
                raise DataError(f"tag {a!r} marked exclusive with itself")

    def _transitive_ancestors(self):
        n = len(self.tags)
        parents = [[] for _ in range(n)]
        for child, parent in self.parent_edges:
            parents[self.index[child]].append(self.index[parent])
        ancestors = [None] * n
        state = [0] * n  # 0 unvisited, 1 in progress, 2 done

        def visit(i):
            if state[i] == 1:
                raise DataError(f"parent graph has a cycle through {self.tags[i]!r}")
            if state[i] == 2:
                return ancestors[i]
            state[i] = 1
            acc = set()
            for p in parents[i]:
                acc.add(p)
                acc |= visit(p)
            ancestors[i] = acc
            state[i] = 2
            return acc

        for i in range(n):
            visit(i)
        return ancestors

    def _exclusive_index(self):
        ex = [set() for _ in self.tags]
        for a, b in self.exclusive_pairs:
            ia, ib = self.index[a], self.index[b]
            ex[ia].add(ib)
            ex[ib].add(ia)  # symmetric by construction
        return ex

    def _check_exclusive_vs_ancestors(self):
        for i, anc in enumerate(self._ancestors):
            if self._exclusive[i] & anc:
                bad = next(iter(self._exclusive[i] & anc))
                raise DataError(
                    f"tag {self.tags[i]!r} is exclusive with its ancestor {self.tags[bad]!r}"
                )

    def ancestors(self, tag):
        return {self.tags[i] for i in self._ancestors[self.index[tag]]}

    def exclusive_partners(self, idx):
        return self._exclusive[idx]

    def label_vector(self, positive_tags, negative_tags=()):
        vec = np.zeros(len(self.tags), dtype=np.int8)
        for t in positive_tags:
            vec[self.index[t]] = POSITIVE
        for t in negative_tags:
            vec[self.index[t]] = NEGATIVE
        return vec


# ---------------------------------------------------------------------------
# ontology file format: `TAG name class`, `PARENT child parent`, `EXCL a b`


def load_ontology(path):
    tags, classes, parents, excl = [], {}, [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind = parts[0].upper()
            if kind == "TAG" and len(parts) == 3:
                tags.append(parts[1])
                classes[parts[1]] = parts[2]
            elif kind == "PARENT" and len(parts) == 3:
                parents.append((parts[1], parts[2]))
            elif kind == "EXCL" and len(parts) == 3:
                excl.append((parts[1], parts[2]))
            else:
                raise DataError(f"{path}:{lineno}: malformed ontology line {raw.strip()!r}")
    return TagOntology(tags, classes, parents, excl)


def save_ontology(path, ont):
    with open(path, "w", encoding="utf-8") as fh:
        for t in ont.tags:
            fh.write(f"TAG {t} {ont.classes[t]}\n")
        for child, parent in ont.parent_edges:
            fh.write(f"PARENT {child} {parent}\n")
        for a, b in ont.exclusive_pairs:
            fh.write(f"EXCL {a} {b}\n")


# ---------------------------------------------------------------------------
# label operations


def expand_labels(labels, ont):
    """Set every ancestor of a positive tag positive; everything else unchanged."""
    out = np.array(labels, dtype=np.int8, copy=True)
    for i in np.nonzero(labels == POSITIVE)[0]:
        for a in ont._ancestors[i]:
            out[a] = POSITIVE
    return out


def reliable_negatives(labels, ont):
    """Indices provably negative: exclusive partners of positives.

    Labels must already be expanded. A positive tag that is exclusive with
    another positive is a contradiction and raises.
    """
    positives = set(np.nonzero(labels == POSITIVE)[0])
    out = set()
    for i in positives:
        partners = ont.exclusive_partners(i)
        clash = partners & positives
        if clash:
            j = next(iter(clash))
            raise DataError(
                f"contradiction: {ont.tags[i]!r} and {ont.tags[j]!r} are both "
                "positive but mutually exclusive"
            )
        out |= partners
    return out - positives


def wce_weights(counts, min_count=1):
    """Per-tag class-balance weights from (positives, negatives) counts.

    beta_p = (P+N)/(2P), beta_n = (P+N)/(2N). Tags with P or N below
    min_count (or zero) are excluded and reported; their weights are set
    to zero so they drop out of the loss.
    """
    counts = np.asarray(counts, dtype=np.float64)
    p, n = counts[:, 0], counts[:, 1]
    usable = (p >= max(min_count, 1)) & (n >= max(min_count, 1))
    beta_p = np.zeros(len(counts))
    beta_n = np.zeros(len(counts))
    beta_p[usable] = (p[usable] + n[usable]) / (2.0 * p[usable])
    beta_n[usable] = (p[usable] + n[usable]) / (2.0 * n[usable])
    excluded = np.nonzero(~usable)[0]
    if excluded.size:
        warnings.warn(
            f"{excluded.size} tag(s) excluded from the weighted loss "
            f"(fewer than {min_count} positives or negatives)",
            stacklevel=2,
        )
    return beta_p, beta_n, excluded


def _wce_from_log_terms(log_p, log_1mp, labels, beta_p, beta_n):
    labels = np.asarray(labels)
    wp = beta_p[None, :] * (labels == POSITIVE)
    wn = beta_n[None, :] * (labels == NEGATIVE)
    total = ops.add(
        (log_p * Tensor(wp)).sum(),
        (log_1mp * Tensor(wn)).sum(),
    )
    return -total


def wce_loss(scores, labels, beta_p, beta_n):
    """Weighted binary cross-entropy over known labels; scores are logits.

    L = -sum_i sum_c [ beta_p y log(sig) + beta_n (1-y) log(1-sig) ],
    restricted to rows for true-lesion proposals (the caller selects rows)
    and to entries whose label is known.
    """
    if scores.shape != np.asarray(labels).shape:
        raise ValueError(f"scores {scores.shape} vs labels {np.asarray(labels).shape}")
    return _wce_from_log_terms(
        ops.log_sigmoid(scores), ops.log_sigmoid(-scores), labels, beta_p, beta_n
    )


def wce_loss_probs(probs, labels, beta_p, beta_n, eps=0.01):
    """WCE for inputs that are already probabilities (refined scores).

    Refined scores come from an unbounded linear map, so the log terms use
    the tangent-tailed safe log rather than a hard clip: values outside
    (0, 1] keep a restoring gradient.
    """
    if probs.shape != np.asarray(labels).shape:
        raise ValueError(f"probs {probs.shape} vs labels {np.asarray(labels).shape}")
    return _wce_from_log_terms(
        ops.safe_log_prob(probs, eps), ops.safe_log_prob(1.0 - probs, eps),
        labels, beta_p, beta_n,
    )


def rhem_loss(scores, labels, ont, k=3, weight=2.0):
    """Hard-example loss on reliable negatives.

    For each lesion row, the k highest-scoring reliable negatives are
    pushed down with weight * -log(1 - sigmoid(s)). Empty selections cost 0.
    """
    labels = np.asarray(labels)
    n_rows, n_tags = labels.shape
    flat_idx = []
    for i in range(n_rows):
        rn = sorted(reliable_negatives(labels[i], ont))
        if not rn:
            continue
        row_scores = scores.data[i, rn]
        order = np.argsort(-row_scores, kind="stable")[:k]
        flat_idx.extend(i * n_tags + rn[j] for j in order)
    if not flat_idx:
        return Tensor(0.0)
    flat = ops.reshape(scores, (n_rows * n_tags,))
    picked = ops.take_rows(flat, np.array(sorted(flat_idx), dtype=np.int64))
    return ops.softplus(picked).sum() * weight


def calibrate_thresholds(scores, labels):
    """Best-F1 decision threshold per tag, swept over the observed scores.

    Predicting positive means score >= threshold. Ties go to the lowest
    threshold. Tags with no positive or no negative on the calibration set
    are skipped (threshold NaN) and reported in the returned list.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = scores.shape
    thresholds = np.full(c, np.nan)
    skipped = []
    for t in range(c):
        y = labels[:, t] == POSITIVE
        known = labels[:, t] != UNKNOWN
        y, s = y[known], scores[known, t]
        if not y.any() or y.all() or y.size == 0:
            skipped.append(t)
            continue
        best_f1, best_thr = -1.0, None
        for thr in np.unique(s):  # ascending, so ties keep the lowest
            pred = s >= thr
            tp = float(np.sum(pred & y))
            fp = float(np.sum(pred & ~y))
            fn = float(np.sum(~pred & y))
            f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
            if f1 > best_f1:
                best_f1, best_thr = f1, thr
        thresholds[t] = best_thr
    return thresholds, skipped
