"""Interaction datasets: loading, validation, partitioning, synthesis.

Domains are groups of interaction logs (school bins or subjects). The
entity kind that recurs across domains is the "overlapping kind"; its
entities shared by sources and target form the overlap set O, everything
else is non-overlapping (D).
"""

from __future__ import annotations

import csv
import string
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    EntityLookupError,
    RowError,
    SchemaError,
)

STUDENT = "student"
EXERCISE = "exercise"
KINDS = (STUDENT, EXERCISE)

CANONICAL_COLUMNS = ("student_id", "exercise_id", "score", "domain_id")


def overlapping_kind(aspect):
    """Entity kind that recurs across domains for a scenario aspect.

    Student-aspect scenarios (cross-school) share exercises; exercise-aspect
    scenarios (cross-subject) share students.
    """
    if aspect == STUDENT:
        return EXERCISE
    if aspect == EXERCISE:
        return STUDENT
    raise ConfigError(f"unknown aspect {aspect!r}, expected student|exercise")


@dataclass(frozen=True)
class InteractionRecord:
    student_id: str
    exercise_id: str
    score: int
    domain_id: str

    def __post_init__(self):
        if self.score not in (0, 1):
            raise DataError(f"score must be 0 or 1, got {self.score!r}")
        if not (self.student_id and self.exercise_id and self.domain_id):
            raise DataError("record ids must be non-empty")


class QMatrix:
    """Binary exercise-by-concept incidence, one row per exercise id."""

    def __init__(self, rows, concept_ids=None):
        self.rows = {}
        self.n_concepts = None
        for ex_id, row in rows.items():
            row = np.asarray(row, dtype=np.int8)
            if self.n_concepts is None:
                self.n_concepts = row.size
            elif row.size != self.n_concepts:
                raise DataError(
                    f"qmatrix row for {ex_id!r} has length {row.size}, "
                    f"expected {self.n_concepts}"
                )
            if not row.any():
                raise DataError(f"qmatrix row for {ex_id!r} has no active concept")
            if not np.isin(row, (0, 1)).all():
                raise DataError(f"qmatrix row for {ex_id!r} is not binary")
            self.rows[ex_id] = row
        if not self.rows:
            raise DataError("qmatrix has no rows")
        self.concept_ids = (
            list(concept_ids)
            if concept_ids is not None
            else [str(i) for i in range(self.n_concepts)]
        )

    def __contains__(self, ex_id):
        return ex_id in self.rows

    def row(self, ex_id):
        try:
            return self.rows[ex_id]
        except KeyError:
            raise EntityLookupError(f"no qmatrix row for exercise {ex_id!r}") from None


@dataclass
class DomainRoster:
    """Source/target roles plus per-domain entity universes."""

    sources: list
    target: str
    students: dict
    exercises: dict

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("roster needs at least one source domain")
        if self.target in self.sources:
            raise ConfigError(f"target {self.target!r} is also a source")
        if len(set(self.sources)) != len(self.sources):
            raise ConfigError("duplicate source domain ids")
        for dom in self.domains:
            self.students.setdefault(dom, set())
            self.exercises.setdefault(dom, set())

    @property
    def domains(self):
        return list(self.sources) + [self.target]

    def universe(self, kind, domain):
        if kind == STUDENT:
            return self.students[domain]
        if kind == EXERCISE:
            return self.exercises[domain]
        raise ConfigError(f"unknown entity kind {kind!r}")


@dataclass(frozen=True)
class EntityPartition:
    overlap: frozenset
    non_overlap: frozenset
    kind: str


@dataclass
class DatasetBundle:
    """Records grouped by domain plus the roster, Q-matrix and index maps."""

    records_by_domain: dict
    roster: DomainRoster
    qmatrix: QMatrix
    partition: EntityPartition
    student_index: dict
    exercise_index: dict
    domain_arrays: dict = field(default_factory=dict)

    @property
    def n_students(self):
        return len(self.student_index)

    @property
    def n_exercises(self):
        return len(self.exercise_index)

    def index(self, kind):
        return self.student_index if kind == STUDENT else self.exercise_index

    def arrays(self, domain):
        """(student idx, exercise idx, score) int arrays for one domain."""
        if domain not in self.domain_arrays:
            recs = self.records_by_domain.get(domain, [])
            self.domain_arrays[domain] = (
                np.array([self.student_index[r.student_id] for r in recs], dtype=np.int64),
                np.array([self.exercise_index[r.exercise_id] for r in recs], dtype=np.int64),
                np.array([r.score for r in recs], dtype=np.float64),
            )
        return self.domain_arrays[domain]

    def record_arrays(self, records):
        return (
            np.array([self.student_index[r.student_id] for r in records], dtype=np.int64),
            np.array([self.exercise_index[r.exercise_id] for r in records], dtype=np.int64),
            np.array([r.score for r in records], dtype=np.float64),
        )

    def qmatrix_dense(self):
        """(n_exercises, K) matrix aligned with the exercise index map."""
        dense = np.zeros((self.n_exercises, self.qmatrix.n_concepts), dtype=np.float64)
        for ex_id, idx in self.exercise_index.items():
            dense[idx] = self.qmatrix.row(ex_id)
        return dense


# ---------------------------------------------------------------------------
# loading


def _parse_score(token, row_no):
    token = token.strip()
    try:
        val = float(token)
    except ValueError:
        raise RowError(row_no, f"score {token!r} is not numeric") from None
    if val == 0.0:
        return 0
    if val == 1.0:
        return 1
    raise RowError(row_no, f"score {token!r} is not binary")


def load_interactions(path, schema=None, delimiter=","):
    """Read interaction records from a delimited file with a header row.

    schema maps canonical column names (student_id, exercise_id, score,
    domain_id) to the file's column names; omitted entries default to the
    canonical names.
    """
    mapping = {c: c for c in CANONICAL_COLUMNS}
    if schema:
        for key, col in schema.items():
            if key not in mapping:
                raise ConfigError(f"unknown schema key {key!r}")
            mapping[key] = col
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            return records
        fields = [f.strip() for f in reader.fieldnames]
        for canonical, col in mapping.items():
            if col not in fields:
                raise SchemaError(
                    f"missing column {col!r} (for {canonical}) in {path}"
                )
        for row_no, row in enumerate(reader, start=1):
            clean = {(k or "").strip(): (v or "") for k, v in row.items()}
            stu = clean[mapping["student_id"]].strip()
            exer = clean[mapping["exercise_id"]].strip()
            dom = clean[mapping["domain_id"]].strip()
            if not (stu and exer and dom):
                raise RowError(row_no, "empty id field")
            score = _parse_score(clean[mapping["score"]], row_no)
            records.append(InteractionRecord(stu, exer, score, dom))
    return records


def load_qmatrix(path, delimiter=","):
    """Read a Q-matrix file in either accepted layout.

    Binary layout: header "exercise_id,<c1>,...,<cK>" with 0/1 cells.
    Concept-list layout: header "exercise_id,concepts" where the second
    column holds semicolon-separated concept ids.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"empty qmatrix file {path}")
    header = [c.strip() for c in rows[0]]
    body = [[c.strip() for c in r] for r in rows[1:]]
    if len(header) == 2 and any(";" in r[1] or not r[1] in ("0", "1") for r in body):
        concept_ids = sorted({c for r in body for c in r[1].split(";") if c})
        index = {c: i for i, c in enumerate(concept_ids)}
        out = {}
        for r in body:
            row = np.zeros(len(concept_ids), dtype=np.int8)
            for c in r[1].split(";"):
                if c:
                    row[index[c]] = 1
            out[r[0]] = row
        return QMatrix(out, concept_ids)
    concept_ids = header[1:]
    out = {}
    for r in body:
        if len(r) != len(header):
            raise DataError(f"qmatrix row for {r[0]!r} has {len(r) - 1} cells")
        out[r[0]] = np.array([int(c) for c in r[1:]], dtype=np.int8)
    return QMatrix(out, concept_ids)


def roster_from_records(records, sources, target):
    """Build a roster whose universes are the entities seen in each domain."""
    students = {d: set() for d in list(sources) + [target]}
    exercises = {d: set() for d in list(sources) + [target]}
    for r in records:
        if r.domain_id in students:
            students[r.domain_id].add(r.student_id)
            exercises[r.domain_id].add(r.exercise_id)
    return DomainRoster(list(sources), target, students, exercises)


def compute_partition(roster, kind):
    """Overlap = (union of sources) intersect target; rest is non-overlap."""
    if kind not in KINDS:
        raise ConfigError(f"unknown entity kind {kind!r}")
    source_union = set()
    for dom in roster.sources:
        if not roster.universe(kind, dom):
            raise ConfigError(f"domain {dom!r} has no {kind} entities")
        source_union |= roster.universe(kind, dom)
    target_set = set(roster.universe(kind, roster.target))
    if not target_set:
        raise ConfigError(f"domain {roster.target!r} has no {kind} entities")
    overlap = source_union & target_set
    non_overlap = (source_union | target_set) - overlap
    return EntityPartition(frozenset(overlap), frozenset(non_overlap), kind)


def build_bundle(records, roster, qmatrix, aspect, strict=True):
    """Assemble and validate a DatasetBundle for one scenario."""
    known_students = set().union(*(roster.students[d] for d in roster.domains))
    known_exercises = set().union(*(roster.exercises[d] for d in roster.domains))
    known_domains = set(roster.domains)
    by_domain = {d: [] for d in roster.domains}
    dropped = {"domain": 0, STUDENT: 0, EXERCISE: 0}
    for r in records:
        if r.domain_id not in known_domains:
            dropped["domain"] += 1
        elif r.student_id not in known_students:
            dropped[STUDENT] += 1
        elif r.exercise_id not in known_exercises:
            dropped[EXERCISE] += 1
        else:
            by_domain[r.domain_id].append(r)
    n_dropped = sum(dropped.values())
    if n_dropped and strict:
        raise DataError(
            "records reference entities absent from the roster: "
            f"{dropped['domain']} unknown domains, {dropped[STUDENT]} unknown "
            f"students, {dropped[EXERCISE]} unknown exercises"
        )
    for ex_id in sorted(known_exercises):
        if ex_id not in qmatrix:
            raise DataError(f"exercise {ex_id!r} has no qmatrix row")
    student_index = {s: i for i, s in enumerate(sorted(known_students))}
    exercise_index = {e: i for i, e in enumerate(sorted(known_exercises))}
    partition = compute_partition(roster, overlapping_kind(aspect))
    return DatasetBundle(
        records_by_domain=by_domain,
        roster=roster,
        qmatrix=qmatrix,
        partition=partition,
        student_index=student_index,
        exercise_index=exercise_index,
    )


# ---------------------------------------------------------------------------
# splits and binning


def split_finetune(records, ratio, seed):
    """Seeded uniform sample without replacement; returns (finetune, test).

    The fine-tune part has exactly round(ratio*N) records (half rounds up);
    both parts preserve the input order.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"fine-tune ratio must be in [0, 1], got {ratio}")
    n = len(records)
    k = int(np.floor(ratio * n + 0.5))
    rng = np.random.default_rng(seed)
    chosen = np.zeros(n, dtype=bool)
    if k:
        chosen[rng.choice(n, size=k, replace=False)] = True
    finetune = [r for r, c in zip(records, chosen) if c]
    test = [r for r, c in zip(records, chosen) if not c]
    return finetune, test


def bin_by_average_score(per_school_records, n_bins):
    """Quantile-bin schools by mean score, highest-scoring bin first.

    Bin sizes differ by at most one; equal means fall back to lexicographic
    school-id order. Labels are "A", "B", ... in descending score order.
    """
    if n_bins < 1:
        raise ConfigError("n_bins must be >= 1")
    if n_bins > len(per_school_records):
        raise ConfigError(
            f"n_bins={n_bins} exceeds the {len(per_school_records)} schools"
        )
    means = {}
    for school, recs in per_school_records.items():
        scores = [r.score if isinstance(r, InteractionRecord) else float(r) for r in recs]
        if not scores:
            raise DataError(f"school {school!r} has no records")
        means[school] = float(np.mean(scores))
    ordered = sorted(means, key=lambda s: (-means[s], s))
    labels = {}
    for b, chunk in enumerate(np.array_split(np.array(ordered, dtype=object), n_bins)):
        label = string.ascii_uppercase[b] if b < 26 else f"bin{b}"
        for school in chunk:
            labels[school] = label
    return labels


# ---------------------------------------------------------------------------
# synthesis


@dataclass
class SynthSpec:
    """Configuration for the desk-scale synthetic benchmark generator."""

    aspect: str = EXERCISE
    n_sources: int = 2
    n_overlapping: int = 200
    n_nonoverlapping_per_domain: int = 50
    n_concepts: int = 8
    shift: float = 1.0
    records_per_entity: int = 30
    max_concepts_per_exercise: int = 4

    def __post_init__(self):
        if self.aspect not in KINDS:
            raise ConfigError(f"unknown aspect {self.aspect!r}")
        if self.n_sources < 1:
            raise ConfigError("need at least one source domain")
        if self.n_overlapping < 1 or self.n_nonoverlapping_per_domain < 1:
            raise ConfigError("entity counts must be positive")
        if self.n_concepts < 1:
            raise ConfigError("need at least one concept")
        if self.records_per_entity < 1:
            raise ConfigError("records_per_entity must be >= 1")
        if self.shift < 0:
            raise ConfigError("shift magnitude must be >= 0")

    @property
    def domains(self):
        return [f"src{i + 1}" for i in range(self.n_sources)] + ["tgt"]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(spec, seed):
    """Sample a DatasetBundle from an ability/difficulty response process.

    Students carry a latent ability vector over concepts, exercises carry
    per-concept difficulties plus a domain-level offset; a response is
    Bernoulli(sigmoid(mean over active concepts of ability - difficulty -
    offset)). Entities of the overlapping kind keep one latent vector in
    every domain, which is what a cross-domain model can exploit.
    """
    rng = np.random.default_rng([seed, 101])
    domains = spec.domains
    k = spec.n_concepts
    shared_kind = overlapping_kind(spec.aspect)
    width = max(4, len(str(spec.n_overlapping)), len(str(spec.n_nonoverlapping_per_domain)))

    def q_row():
        n_active = int(rng.integers(1, min(spec.max_concepts_per_exercise, k) + 1))
        active = rng.choice(k, size=n_active, replace=False)
        row = np.zeros(k, dtype=np.int8)
        row[active] = 1
        return row

    qrows = {}
    theta = {}
    diff = {}
    if shared_kind == STUDENT:
        shared_students = [f"stu{i:0{width}d}" for i in range(spec.n_overlapping)]
        for s in shared_students:
            theta[s] = rng.standard_normal(k)
        dom_students = {d: list(shared_students) for d in domains}
        dom_exercises = {}
        for d in domains:
            dom_exercises[d] = [
                f"ex_{d}_{j:0{width}d}" for j in range(spec.n_nonoverlapping_per_domain)
            ]
            for e in dom_exercises[d]:
                qrows[e] = q_row()
                diff[e] = rng.standard_normal(k) * qrows[e]
    else:
        shared_exercises = [f"ex{j:0{width}d}" for j in range(spec.n_overlapping)]
        for e in shared_exercises:
            qrows[e] = q_row()
            diff[e] = rng.standard_normal(k) * qrows[e]
        dom_exercises = {d: list(shared_exercises) for d in domains}
        dom_students = {}
        for d in domains:
            dom_students[d] = [
                f"stu_{d}_{i:0{width}d}" for i in range(spec.n_nonoverlapping_per_domain)
            ]
            for s in dom_students[d]:
                theta[s] = rng.standard_normal(k)

    offsets = {d: (rng.standard_normal() * spec.shift) for d in domains}

    records = []
    for d in domains:
        exer_ids = dom_exercises[d]
        for s in dom_students[d]:
            picks = rng.integers(0, len(exer_ids), size=spec.records_per_entity)
            draws = rng.random(spec.records_per_entity)
            for pick, draw in zip(picks, draws):
                e = exer_ids[pick]
                active = qrows[e].astype(bool)
                logit = np.mean(theta[s][active] - diff[e][active] - offsets[d])
                records.append(
                    InteractionRecord(s, e, int(draw < _sigmoid(logit)), d)
                )

    roster = DomainRoster(
        sources=domains[:-1],
        target=domains[-1],
        students={d: set(dom_students[d]) for d in domains},
        exercises={d: set(dom_exercises[d]) for d in domains},
    )
    qmatrix = QMatrix(qrows)
    return build_bundle(records, roster, qmatrix, spec.aspect)
