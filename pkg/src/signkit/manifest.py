"""Dataset manifests: the sample/signer/gloss/group universe of one sign language.

A manifest is the single source of truth consumed by the split solver, the
grouping workflow, the training engine, and the evaluation harness. It is
persisted as a line-delimited record file (see :mod:`signkit.records`) with
four record kinds::

    manifest language=<tag>
    gloss    id=<id> language=<tag>
    group    id=<id> members=<id>,<id>,...
    signer   id=<id>
    sample   id=<id> signer=<id> gloss=<id> language=<tag> video_length=<n>
             sign_start=<n> sign_end=<n> subset=<train|test|unassigned>

Frame indices are half-open: the sign occupies [sign_start, sign_end).
Manifests are immutable after load; derived datasets are new manifests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .records import RecordError, check_fields, format_record, is_identifier, read_records

# Language tags and signer ids are opaque strings; wrapping them in classes
# would buy nothing at this scale.
LanguageTag = str
SignerId = str

SUBSETS = ("train", "test", "unassigned")


class IntegrityError(ValueError):
    """A manifest invariant is violated (dangling reference, bad boundary...)."""


@dataclass(frozen=True)
class GlossLabel:
    id: str
    language: LanguageTag


@dataclass(frozen=True)
class GroupLabel:
    """A visually-similar-sign group; members are gloss ids, disjoint across groups."""

    id: str
    members: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(self.members)))


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    signer: SignerId
    gloss: str
    language: LanguageTag
    video_length: int
    sign_start: int
    sign_end: int
    subset: str = "unassigned"

    @property
    def sign_length(self) -> int:
        return self.sign_end - self.sign_start


@dataclass(frozen=True)
class DatasetManifest:
    language: LanguageTag
    glosses: tuple[GlossLabel, ...] = ()
    groups: tuple[GroupLabel, ...] = ()
    signers: tuple[SignerId, ...] = ()
    samples: tuple[SampleRecord, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "glosses", tuple(self.glosses))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "signers", tuple(self.signers))
        object.__setattr__(self, "samples", tuple(self.samples))

    # -- lookups -----------------------------------------------------------

    def gloss_ids(self) -> list[str]:
        return sorted(g.id for g in self.glosses)

    def group_ids(self) -> list[str]:
        return sorted(g.id for g in self.groups)

    def gloss_to_group(self) -> dict[str, str]:
        mapping: dict[str, str] = {}
        for group in self.groups:
            for member in group.members:
                mapping[member] = group.id
        return mapping

    def samples_by_subset(self, subset: str) -> list[SampleRecord]:
        return [s for s in self.samples if s.subset == subset]

    # -- validation --------------------------------------------------------

    def validate(self) -> "DatasetManifest":
        if not is_identifier(self.language):
            raise IntegrityError(f"invalid language tag {self.language!r}")
        gloss_ids = set()
        for gloss in self.glosses:
            if not is_identifier(gloss.id):
                raise IntegrityError(f"invalid gloss id {gloss.id!r}")
            if gloss.id in gloss_ids:
                raise IntegrityError(f"duplicate gloss id {gloss.id!r}")
            if gloss.language != self.language:
                raise IntegrityError(
                    f"gloss {gloss.id!r} has language {gloss.language!r}, "
                    f"manifest is {self.language!r}")
            gloss_ids.add(gloss.id)

        grouped: dict[str, str] = {}
        group_ids = set()
        for group in self.groups:
            if not is_identifier(group.id):
                raise IntegrityError(f"invalid group id {group.id!r}")
            if group.id in group_ids:
                raise IntegrityError(f"duplicate group id {group.id!r}")
            group_ids.add(group.id)
            if not group.members:
                raise IntegrityError(f"group {group.id!r} has no members")
            for member in group.members:
                if member not in gloss_ids:
                    raise IntegrityError(
                        f"group {group.id!r} references unknown gloss {member!r}")
                if member in grouped:
                    raise IntegrityError(
                        f"gloss {member!r} belongs to groups "
                        f"{grouped[member]!r} and {group.id!r}")
                grouped[member] = group.id
        missing = gloss_ids - set(grouped)
        if missing:
            raise IntegrityError(
                f"glosses not covered by any group: {sorted(missing)[:5]}")

        signer_ids = set()
        for signer in self.signers:
            if not is_identifier(signer):
                raise IntegrityError(f"invalid signer id {signer!r}")
            if signer in signer_ids:
                raise IntegrityError(f"duplicate signer id {signer!r}")
            signer_ids.add(signer)

        sample_ids = set()
        for sample in self.samples:
            if not is_identifier(sample.sample_id):
                raise IntegrityError(f"invalid sample id {sample.sample_id!r}")
            if sample.sample_id in sample_ids:
                raise IntegrityError(f"duplicate sample id {sample.sample_id!r}")
            sample_ids.add(sample.sample_id)
            if sample.signer not in signer_ids:
                raise IntegrityError(
                    f"sample {sample.sample_id!r} references unknown signer "
                    f"{sample.signer!r}")
            if sample.gloss not in gloss_ids:
                raise IntegrityError(
                    f"sample {sample.sample_id!r} references unknown gloss "
                    f"{sample.gloss!r}")
            if sample.language != self.language:
                raise IntegrityError(
                    f"sample {sample.sample_id!r} has language "
                    f"{sample.language!r}, manifest is {self.language!r}")
            if sample.subset not in SUBSETS:
                raise IntegrityError(
                    f"sample {sample.sample_id!r} has invalid subset "
                    f"{sample.subset!r}")
            if not (0 <= sample.sign_start < sample.sign_end <= sample.video_length):
                raise IntegrityError(
                    f"sample {sample.sample_id!r} violates "
                    f"0 <= sign_start < sign_end <= video_length "
                    f"({sample.sign_start}, {sample.sign_end}, {sample.video_length})")
        return self

    def with_subsets(self, assignment: dict[str, str]) -> "DatasetManifest":
        """Return a copy with sample subsets replaced per sample_id -> subset."""
        samples = tuple(
            replace(s, subset=assignment.get(s.sample_id, s.subset))
            for s in self.samples)
        return replace(self, samples=samples).validate()


def singleton_groups(glosses) -> tuple[GroupLabel, ...]:
    """One group per gloss, group id equal to the gloss id."""
    return tuple(GroupLabel(id=g.id, members=(g.id,)) for g in glosses)


def project_to_groups(m: DatasetManifest, labels) -> list[str]:
    """Map each gloss id to the id of its unique containing group."""
    mapping = m.gloss_to_group()
    out = []
    for label in labels:
        if label not in mapping:
            raise IntegrityError(f"unknown gloss label {label!r}")
        out.append(mapping[label])
    return out


# -- persistence -------------------------------------------------------------

_GLOSS_FIELDS = ["id", "language"]
_GROUP_FIELDS = ["id", "members"]
_SIGNER_FIELDS = ["id"]
_SAMPLE_FIELDS = ["id", "signer", "gloss", "language", "video_length",
                  "sign_start", "sign_end", "subset"]


def _parse_int(fields: dict[str, str], key: str, line_no: int) -> int:
    try:
        return int(fields[key])
    except ValueError:
        raise RecordError(f"field {key!r} is not an integer: {fields[key]!r}",
                          line_no) from None


def load_manifest(path) -> DatasetManifest:
    """Load and validate a manifest file.

    Raises :class:`~signkit.records.RecordError` with a line number on parse
    failures and :class:`IntegrityError` on invariant violations.
    """
    language: str | None = None
    glosses: list[GlossLabel] = []
    groups: list[GroupLabel] = []
    signers: list[str] = []
    samples: list[SampleRecord] = []
    for line_no, kind, fields in read_records(path):
        if kind == "manifest":
            check_fields(kind, fields, ["language"], line_no)
            if language is not None:
                raise RecordError("duplicate manifest header", line_no)
            language = fields["language"]
        elif kind == "gloss":
            check_fields(kind, fields, _GLOSS_FIELDS, line_no)
            glosses.append(GlossLabel(id=fields["id"], language=fields["language"]))
        elif kind == "group":
            check_fields(kind, fields, _GROUP_FIELDS, line_no)
            groups.append(GroupLabel(id=fields["id"],
                                     members=tuple(fields["members"].split(","))))
        elif kind == "signer":
            check_fields(kind, fields, _SIGNER_FIELDS, line_no)
            signers.append(fields["id"])
        elif kind == "sample":
            check_fields(kind, fields, _SAMPLE_FIELDS, line_no)
            samples.append(SampleRecord(
                sample_id=fields["id"],
                signer=fields["signer"],
                gloss=fields["gloss"],
                language=fields["language"],
                video_length=_parse_int(fields, "video_length", line_no),
                sign_start=_parse_int(fields, "sign_start", line_no),
                sign_end=_parse_int(fields, "sign_end", line_no),
                subset=fields["subset"],
            ))
        else:
            raise RecordError(f"unknown record kind {kind!r}", line_no)
    if language is None:
        raise RecordError("missing manifest header record")
    if not groups and glosses:
        groups = list(singleton_groups(glosses))
    manifest = DatasetManifest(
        language=language, glosses=tuple(glosses), groups=tuple(groups),
        signers=tuple(signers), samples=tuple(samples))
    return manifest.validate()


def save_manifest(m: DatasetManifest, path) -> None:
    """Write a validated manifest; byte-stable (all record kinds sorted by id)."""
    m.validate()
    lines = [format_record("manifest", [("language", m.language)])]
    for gloss in sorted(m.glosses, key=lambda g: g.id):
        lines.append(format_record("gloss", [("id", gloss.id),
                                             ("language", gloss.language)]))
    for group in sorted(m.groups, key=lambda g: g.id):
        lines.append(format_record("group", [("id", group.id),
                                             ("members", ",".join(group.members))]))
    for signer in sorted(m.signers):
        lines.append(format_record("signer", [("id", signer)]))
    for sample in sorted(m.samples, key=lambda s: s.sample_id):
        lines.append(format_record("sample", [
            ("id", sample.sample_id), ("signer", sample.signer),
            ("gloss", sample.gloss), ("language", sample.language),
            ("video_length", sample.video_length),
            ("sign_start", sample.sign_start), ("sign_end", sample.sign_end),
            ("subset", sample.subset)]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
