"""Ground-truth parsers for the four benchmark layouts plus a generic JSON format.

Benchmark files ship image references in inconsistent forms (paths, mixed
case, with or without extensions), so ids from those layouts are matched to
store ids after stripping directory components and image extensions and
lowercasing. The generic JSON format is matched verbatim.

Layouts:
  oxford / paris  directory of ``<name>_query.txt`` / ``_good`` / ``_ok`` /
                  ``_junk`` files; positives are good + ok, the query file's
                  bounding box is validated but never applied (queries use
                  the full image).
  holidays        derived from ids alone: 6-digit stems, leading 4 digits
                  name the group, the ``...00`` member is the query and is
                  excluded from its own ranking.
  ukbench         derived from ids alone: trailing integer sequence, groups
                  of 4 consecutive images; every image queries its own group
                  and the self-match counts.
  json            explicit schema, see `parse_generic_json`.
"""

from __future__ import annotations

import json
import re
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import GroundTruthError, ValidationError
from .evaluation import EvalProtocol, GroundTruth, QueryGroundTruth

IMAGE_EXTENSIONS = {
    ".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tif", ".tiff", ".webp", ".ppm", ".pgm",
}

_HOLIDAYS_STEM = re.compile(r"^\d{6}$")
_TRAILING_DIGITS = re.compile(r"^(.*?)(\d+)$")
_OXFORD_PREFIX = "oxc1_"


class DatasetLayout(Enum):
    OXFORD = "oxford"
    PARIS = "paris"
    HOLIDAYS = "holidays"
    UKBENCH = "ukbench"
    GENERIC_JSON = "json"

    @classmethod
    def parse(cls, name: str) -> "DatasetLayout":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(layout.value for layout in cls)
            raise ValidationError(f"unknown layout {name!r} (expected one of {valid})")


def normalize_image_id(raw: str) -> str:
    """Strip directories and a known image extension, lowercase the rest."""
    stem = raw.replace("\\", "/").rsplit("/", 1)[-1]
    dot = stem.rfind(".")
    if dot > 0 and stem[dot:].lower() in IMAGE_EXTENSIONS:
        stem = stem[:dot]
    return stem.lower()


def build_id_map(image_ids: Sequence[str]) -> dict[str, str]:
    """Map normalized stems back to store ids, rejecting collisions."""
    mapping: dict[str, str] = {}
    for ident in image_ids:
        key = normalize_image_id(ident)
        if key in mapping and mapping[key] != ident:
            raise GroundTruthError(
                f"store ids {mapping[key]!r} and {ident!r} collide on stem {key!r}"
            )
        mapping[key] = ident
    return mapping


def _read_id_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise GroundTruthError(f"missing ground-truth file {path}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _lookup(token: str, id_map: dict[str, str], context: str) -> str:
    key = normalize_image_id(token)
    if key not in id_map:
        raise GroundTruthError(f"{context}: image {token!r} is absent from the store")
    return id_map[key]


def parse_oxford_gt(gt_dir: str | Path, image_ids: Sequence[str]) -> GroundTruth:
    """Parse an Oxford/Paris ground-truth directory against the store's ids."""
    gt_dir = Path(gt_dir)
    if not gt_dir.is_dir():
        raise GroundTruthError(f"ground-truth directory {gt_dir} does not exist")
    query_files = sorted(gt_dir.glob("*_query.txt"))
    if not query_files:
        raise GroundTruthError(f"no *_query.txt files under {gt_dir}")
    id_map = build_id_map(image_ids)

    queries: list[QueryGroundTruth] = []
    for query_file in query_files:
        name = query_file.name[: -len("_query.txt")]
        tokens = query_file.read_text(encoding="utf-8").split()
        if len(tokens) != 5:
            raise GroundTruthError(
                f"{query_file}: expected an image token and 4 bounding-box values, "
                f"got {len(tokens)} fields"
            )
        try:
            [float(tok) for tok in tokens[1:]]
        except ValueError as exc:
            raise GroundTruthError(f"{query_file}: unparseable bounding box ({exc})") from exc
        token = tokens[0]
        if token.startswith(_OXFORD_PREFIX):
            token = token[len(_OXFORD_PREFIX):]
        query_id = _lookup(token, id_map, str(query_file))

        positives: set[str] = set()
        for suffix in ("good", "ok"):
            companion = gt_dir / f"{name}_{suffix}.txt"
            for line in _read_id_lines(companion):
                positives.add(_lookup(line, id_map, str(companion)))
        junk: set[str] = set()
        junk_file = gt_dir / f"{name}_junk.txt"
        for line in _read_id_lines(junk_file):
            key = normalize_image_id(line)
            if key in id_map:
                junk.add(id_map[key])
        if not positives:
            raise GroundTruthError(f"{gt_dir}/{name}: no positives in the good/ok files")
        junk -= positives
        queries.append(QueryGroundTruth(query_id, frozenset(positives), frozenset(junk)))
    return GroundTruth(tuple(queries), EvalProtocol.MAP)


def parse_holidays(image_ids: Sequence[str]) -> GroundTruth:
    """Group 6-digit stems by their leading 4 digits; the ``...00`` member queries."""
    groups: dict[str, dict[str, str]] = {}
    for ident in image_ids:
        stem = normalize_image_id(ident)
        if not _HOLIDAYS_STEM.match(stem):
            raise GroundTruthError(f"id {ident!r}: stem {stem!r} is not a 6-digit number")
        members = groups.setdefault(stem[:4], {})
        members[stem[4:]] = ident

    queries: list[QueryGroundTruth] = []
    for group in sorted(groups):
        members = groups[group]
        if len(members) < 2:
            raise GroundTruthError(f"group {group} has a single image, no positives exist")
        if "00" not in members:
            raise GroundTruthError(f"group {group} lacks the ...00 query image")
        query_id = members["00"]
        positives = frozenset(ident for suffix, ident in members.items() if suffix != "00")
        queries.append(QueryGroundTruth(query_id, positives, exclude_self=True))
    return GroundTruth(tuple(queries), EvalProtocol.MAP)


def parse_ukbench(image_ids: Sequence[str]) -> GroundTruth:
    """Derive groups of 4 from the trailing integer in each stem."""
    by_seq: dict[int, str] = {}
    for ident in image_ids:
        stem = normalize_image_id(ident)
        match = _TRAILING_DIGITS.match(stem)
        if not match:
            raise GroundTruthError(f"id {ident!r}: stem {stem!r} has no trailing sequence number")
        seq = int(match.group(2))
        if seq in by_seq:
            raise GroundTruthError(f"ids {by_seq[seq]!r} and {ident!r} share sequence {seq}")
        by_seq[seq] = ident

    count = len(by_seq)
    if count % 4 != 0:
        raise GroundTruthError(f"image count {count} is not divisible by 4")
    missing = sorted(set(range(count)) - set(by_seq))
    if missing:
        raise GroundTruthError(f"sequence has gaps (first few: {missing[:5]})")

    queries: list[QueryGroundTruth] = []
    for seq in range(count):
        group_start = (seq // 4) * 4
        positives = frozenset(by_seq[group_start + j] for j in range(4))
        queries.append(QueryGroundTruth(by_seq[seq], positives))
    return GroundTruth(tuple(queries), EvalProtocol.NS)


def parse_generic_json(path: str | Path) -> GroundTruth:
    """Parse the JSON ground-truth document.

    Schema: ``{"protocol": "map"|"ns", "queries": [{"query": str,
    "positives": [str, ...], "junk": [str, ...]?, "exclude_self": bool?}]}``.
    Ids are matched to store ids verbatim (checked at evaluation time).
    """
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise GroundTruthError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise GroundTruthError(f"{path}: top level must be an object")
    if "protocol" not in doc or "queries" not in doc:
        raise GroundTruthError(f"{path}: required keys are 'protocol' and 'queries'")
    if not isinstance(doc["protocol"], str):
        raise GroundTruthError(f"{path}: 'protocol' must be a string")
    try:
        protocol = EvalProtocol.parse(doc["protocol"])
    except ValidationError as exc:
        raise GroundTruthError(f"{path}: {exc}") from exc
    raw_queries = doc["queries"]
    if not isinstance(raw_queries, list):
        raise GroundTruthError(f"{path}: 'queries' must be a list")

    queries: list[QueryGroundTruth] = []
    for i, entry in enumerate(raw_queries):
        where = f"{path}: queries[{i}]"
        if not isinstance(entry, dict):
            raise GroundTruthError(f"{where}: must be an object")
        unknown = set(entry) - {"query", "positives", "junk", "exclude_self"}
        if unknown:
            raise GroundTruthError(f"{where}: unknown keys {sorted(unknown)}")
        query_id = entry.get("query")
        if not isinstance(query_id, str):
            raise GroundTruthError(f"{where}: 'query' must be a string")
        positives = _string_list(entry.get("positives"), f"{where}: 'positives'")
        if not positives:
            raise GroundTruthError(f"{where}: 'positives' must be nonempty")
        junk = _string_list(entry.get("junk", []), f"{where}: 'junk'")
        exclude_self = entry.get("exclude_self", False)
        if not isinstance(exclude_self, bool):
            raise GroundTruthError(f"{where}: 'exclude_self' must be a boolean")
        queries.append(
            QueryGroundTruth(query_id, frozenset(positives), frozenset(junk), exclude_self)
        )
    try:
        return GroundTruth(tuple(queries), protocol)
    except GroundTruthError as exc:
        raise GroundTruthError(f"{path}: {exc}") from exc


def _string_list(value, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise GroundTruthError(f"{where} must be a list of strings")
    return value


def write_generic_json(gt: GroundTruth, path: str | Path) -> None:
    """Serialize ground truth to the JSON schema accepted by `parse_generic_json`."""
    doc = {
        "protocol": gt.protocol.value,
        "queries": [
            {
                "query": q.query_id,
                "positives": sorted(q.positives),
                "junk": sorted(q.junk),
                "exclude_self": q.exclude_self,
            }
            for q in gt.queries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_ground_truth(
    layout: DatasetLayout, gt_path: str | Path | None, image_ids: Sequence[str]
) -> GroundTruth:
    """Dispatch to the parser for `layout`."""
    if layout in (DatasetLayout.OXFORD, DatasetLayout.PARIS):
        if gt_path is None:
            raise ValidationError(f"layout {layout.value} needs a ground-truth directory")
        return parse_oxford_gt(gt_path, image_ids)
    if layout is DatasetLayout.HOLIDAYS:
        return parse_holidays(image_ids)
    if layout is DatasetLayout.UKBENCH:
        return parse_ukbench(image_ids)
    if gt_path is None:
        raise ValidationError("layout json needs a ground-truth file")
    return parse_generic_json(gt_path)


def validate_against_store(gt: GroundTruth, image_ids: Iterable[str]) -> GroundTruth:
    """Check gt ids against store ids; positives must exist, junk is filtered.

    Returns a ground truth whose junk sets reference only stored ids.
    """
    available = set(image_ids)
    rewritten: list[QueryGroundTruth] = []
    changed = False
    for q in gt.queries:
        if q.query_id not in available:
            raise GroundTruthError(f"query {q.query_id!r} is absent from the store")
        missing = q.positives - available
        if missing:
            raise GroundTruthError(
                f"query {q.query_id!r}: positives absent from the store: {sorted(missing)}"
            )
        junk = q.junk & available
        if junk != q.junk:
            changed = True
            rewritten.append(QueryGroundTruth(q.query_id, q.positives, frozenset(junk), q.exclude_self))
        else:
            rewritten.append(q)
    if not changed:
        return gt
    return GroundTruth(tuple(rewritten), gt.protocol)
