"""Documentation artifacts: metadata, data dictionary, DMP scaffold, provenance.

Metadata documents group their elements under the four FAIR headings
(findable, accessible, interoperable, reusable); coverage fields are
computed from the dataset, the rest comes from project configuration, and
a document missing manual fields is a draft.  The dictionary is rendered
for two audiences: the published view never contains the researcher-only
links block.  The provenance log is an append-only JSON-lines file whose
entries chain a digest of their predecessor, so any mutation of history is
detectable.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .errors import DocsError
from .jsonio import compact_dumps, sha256_hex
from .model import Dataset, Indicator, UncertaintyLevel

EN_DASH = "–"

_MANUAL_FIELDS = (
    "title",
    "identifier",
    "metadata_reference",
    "access_rights",
    "licence",
    "fields_of_research",
    "socio_economic_objectives",
    "legal_ethical_requirements",
    "standard_vocabulary_note",
)
_AUTO_FIELDS = ("geographical_coverage", "temporal_coverage")


@dataclass(frozen=True)
class MetadataDoc:
    """FAIR metadata for one published dataset."""

    indicator_id: str
    title: str
    identifier: str
    metadata_reference: str
    access_rights: str
    licence: str
    geographical_coverage: str
    temporal_coverage: str
    fields_of_research: str
    socio_economic_objectives: str
    legal_ethical_requirements: str
    standard_vocabulary_note: str
    variable_type: str
    draft: bool

    def missing_fields(self) -> tuple[str, ...]:
        return tuple(
            name for name in (*_MANUAL_FIELDS, *_AUTO_FIELDS) if not getattr(self, name)
        )

    def to_json(self) -> dict:
        return {
            "indicator_id": self.indicator_id,
            "draft": self.draft,
            "variable_type": self.variable_type,
            "findable": {
                "title": self.title,
                "identifier": self.identifier,
                "metadata_reference": self.metadata_reference,
            },
            "accessible": {
                "legal_ethical_requirements": self.legal_ethical_requirements,
                "access_rights": self.access_rights,
            },
            "interoperable": {
                "standard_vocabulary_note": self.standard_vocabulary_note,
            },
            "reusable": {
                "licence": self.licence,
                "geographical_coverage": self.geographical_coverage,
                "temporal_coverage": self.temporal_coverage,
                "fields_of_research": self.fields_of_research,
                "socio_economic_objectives": self.socio_economic_objectives,
            },
        }

    def to_markdown(self) -> str:
        status = " (draft)" if self.draft else ""
        lines = [
            f"# Metadata: {self.title or self.indicator_id}{status}",
            "",
            "## Findable",
            f"- Title: {self.title}",
            f"- Identifier: {self.identifier}",
            f"- Metadata reference: {self.metadata_reference}",
            "",
            "## Accessible",
            f"- Legal and ethical requirements: {self.legal_ethical_requirements}",
            f"- Access rights: {self.access_rights}",
            "",
            "## Interoperable",
            f"- Standard vocabulary: {self.standard_vocabulary_note}",
            "",
            "## Reusable",
            f"- Licence: {self.licence}",
            f"- Geographical coverage: {self.geographical_coverage}",
            f"- Temporal coverage: {self.temporal_coverage}",
            f"- Fields of research: {self.fields_of_research}",
            f"- Socio-economic objectives: {self.socio_economic_objectives}",
            "",
            f"Variable type: {self.variable_type}",
        ]
        return "\n".join(lines) + "\n"


def coverage_summary(dataset: Dataset) -> tuple[str, str]:
    """(geographical, temporal) coverage strings computed from the data."""
    geographical = f"{dataset.level.value} (ASGS{int(dataset.edition)}), Australia"
    years = dataset.years()
    if not years:
        return geographical, ""
    if years[0] == years[-1]:
        return geographical, str(years[0])
    return geographical, f"{years[0]}{EN_DASH}{years[-1]}"


def emit_metadata(
    indicator: Indicator,
    dataset: Dataset,
    project_config: Mapping,
    *,
    publishable: bool = False,
) -> MetadataDoc:
    """Build the metadata document; publishable mode refuses missing fields."""
    config = dict(project_config.get("metadata", {}))
    geographical, temporal = coverage_summary(dataset)
    doc = MetadataDoc(
        indicator_id=indicator.id,
        title=config.get("title", indicator.name),
        identifier=config.get("identifier", f"ard:{indicator.id}"),
        metadata_reference=config.get("metadata_reference", ""),
        access_rights=config.get("access_rights", ""),
        licence=config.get("licence", ""),
        geographical_coverage=geographical,
        temporal_coverage=temporal,
        fields_of_research=config.get("fields_of_research", ""),
        socio_economic_objectives=config.get("socio_economic_objectives", ""),
        legal_ethical_requirements=config.get("legal_ethical_requirements", ""),
        standard_vocabulary_note=config.get(
            "standard_vocabulary_note",
            "Compiled in the project's standardized record format with controlled filter vocabulary.",
        ),
        variable_type=indicator.value_kind.value,
        draft=False,
    )
    missing = doc.missing_fields()
    if missing:
        if publishable:
            raise DocsError(f"metadata not publishable; missing fields: {', '.join(missing)}")
        doc = replace(doc, draft=True)
    return doc


class Audience(enum.Enum):
    PUBLISHED = "published"
    RESEARCHER = "researcher"


@dataclass(frozen=True)
class ResearcherLinks:
    cleaning_code_link: str = ""
    data_file_links: tuple[str, ...] = ()
    project_doc_links: tuple[str, ...] = ()


@dataclass(frozen=True)
class DictionaryEntry:
    """Per-indicator dictionary record; the links block is researcher-only."""

    variable_name: str
    definition: str
    variable_type: str
    data_source: str
    temporal_correspondence_applied: bool
    uncertainty_present: UncertaintyLevel
    researcher_only: ResearcherLinks = ResearcherLinks()


UNCERTAINTY_LEGEND = (
    "Uncertainty levels: 0 = no approximation touched the value; "
    "1 = boundary conversion discarded only contributions below the discard "
    "threshold (10% by default) or counted a missing input as zero; "
    "2 = the value could not be reconstructed and was suppressed. "
    "Level-2 records are removed before release; levels 0 and 1 are retained."
)


def dictionary_entry(indicator: Indicator, docs_config: Mapping) -> DictionaryEntry:
    links = docs_config.get("researcher_links", {})
    return DictionaryEntry(
        variable_name=indicator.name,
        definition=docs_config.get("definition", ""),
        variable_type=indicator.value_kind.value,
        data_source=docs_config.get("data_source", indicator.source_id),
        temporal_correspondence_applied=indicator.correspondence_applied,
        uncertainty_present=indicator.max_uncertainty,
        researcher_only=ResearcherLinks(
            cleaning_code_link=links.get("cleaning_code", ""),
            data_file_links=tuple(links.get("data_files", ())),
            project_doc_links=tuple(links.get("project_docs", ())),
        ),
    )


def emit_dictionary(
    indicators: Sequence[Indicator],
    project_config: Mapping,
    audience: Audience,
) -> str:
    """Render the dictionary for one audience as Markdown."""
    per_indicator = project_config.get("dictionary", {})
    lines = [
        f"# Data dictionary ({audience.value} view)",
        "",
        UNCERTAINTY_LEGEND,
        "",
    ]
    for indicator in sorted(indicators, key=lambda i: i.id):
        entry = dictionary_entry(indicator, per_indicator.get(indicator.id, {}))
        lines.extend(
            [
                f"## {entry.variable_name}",
                "",
                f"- Variable name: {entry.variable_name}",
                f"- Definition: {entry.definition}",
                f"- Variable type: {entry.variable_type}",
                f"- Data source: {entry.data_source}",
                f"- Temporal correspondence applied: {'yes' if entry.temporal_correspondence_applied else 'no'}",
                f"- Uncertainty present: {int(entry.uncertainty_present)} ({entry.uncertainty_present.name.lower()})",
            ]
        )
        if audience is Audience.RESEARCHER:
            links = entry.researcher_only
            lines.extend(
                [
                    "- Researcher-only links:",
                    f"  - Cleaning code: {links.cleaning_code_link}",
                    f"  - Data files: {', '.join(links.data_file_links)}",
                    f"  - Project documentation: {', '.join(links.project_doc_links)}",
                ]
            )
        lines.append("")
    return "\n".join(lines)


DMP_TOPICS: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("data_discovery", "Data discovery", (
        "What type of data will the project collect?",
    )),
    ("data_description", "Data description", (
        "Describe the data to be collected: specifications, participants, and characteristics.",
    )),
    ("data_collection", "Data collection", (
        "Who is responsible for collecting the data, and where does collection occur?",
        "Is special equipment required?",
        "What are the expected data characteristics?",
        "What are the start and end dates of collection?",
        "What volume of data is expected?",
    )),
    ("data_organisation", "Data organisation", (
        "How will received data be stored, catalogued, and documented?",
        "Are quality-control measures in place on receipt?",
    )),
    ("data_preservation", "Data preservation procedures", (
        "Do preservation obligations extend beyond the life of the project?",
    )),
    ("data_storage", "Data storage", (
        "Where will the data be stored?",
        "Does the chosen storage account for data loss?",
    )),
    ("data_volume", "Data volume", (
        "What data volume is expected over the project?",
        "Can the chosen storage handle that volume?",
    )),
    ("data_loss_procedures", "Data loss procedures", (
        "Are multiple storage options in place to prevent loss?",
        "If loss occurs, what recovery measures apply?",
    )),
    ("data_privacy_confidentiality", "Data privacy and confidentiality", (
        "Have participant privacy and confidentiality been considered, including ethics approval?",
        "Is the residual risk to participants low, and how was it minimised?",
    )),
    ("data_ownership", "Data ownership", (
        "Which organisation or individual owns the collected data?",
    )),
    ("quality_assurance", "Quality assurance", (
        "What quality-assurance procedures are in place?",
    )),
    ("documentation", "Documentation", (
        "Where are decisions about collection and processing recorded, and by whom?",
        "Which decisions must be documented?",
    )),
    ("dissemination", "Dissemination", (
        "Will the data be disseminated, and through which channels?",
        "Have legal, licensing, and ethical requirements been considered?",
    )),
    ("metadata", "Metadata", (
        "Have metadata principles been applied so the data is easy to find and reuse?",
    )),
)


def scaffold_dmp(project_config: Mapping) -> str:
    """Data-management-plan scaffold: every topic, its prompts, answers or OPEN."""
    answers = project_config.get("dmp_answers", {})
    name = project_config.get("name", "unnamed project")
    lines = [
        f"# Data management plan: {name}",
        "",
        "Complete every topic before collection begins; revisit the plan at "
        "least annually. Ethics approval, governance obligations, and storage "
        "decisions belong here before any data is touched.",
        "",
    ]
    for key, title, questions in DMP_TOPICS:
        answer = answers.get(key, "")
        status = "" if answer else " — OPEN"
        lines.append(f"## {title}{status}")
        lines.append("")
        for question in questions:
            lines.append(f"- {question}")
        lines.append("")
        lines.append(f"Answer: {answer if answer else 'OPEN'}")
        lines.append("")
    return "\n".join(lines)


GENESIS_DIGEST = "0" * 64
PROVENANCE_HEADER = {"format": "ardkit-provenance/1", "digest_algorithm": "sha256"}


@dataclass(frozen=True)
class ProvenanceEntry:
    timestamp: str
    actor: str
    stage: str
    decision_text: str
    input_digests: tuple[str, ...]
    output_digests: tuple[str, ...]
    tool_version: str
    prev_digest: str
    digest: str

    def body(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "actor": self.actor,
            "stage": self.stage,
            "decision_text": self.decision_text,
            "input_digests": list(self.input_digests),
            "output_digests": list(self.output_digests),
            "tool_version": self.tool_version,
            "prev_digest": self.prev_digest,
        }

    def expected_digest(self) -> str:
        return sha256_hex(compact_dumps(self.body()))

    def to_json(self) -> dict:
        doc = self.body()
        doc["digest"] = self.digest
        return doc

    @classmethod
    def from_json(cls, doc: Mapping) -> "ProvenanceEntry":
        return cls(
            timestamp=doc["timestamp"],
            actor=doc["actor"],
            stage=doc["stage"],
            decision_text=doc["decision_text"],
            input_digests=tuple(doc["input_digests"]),
            output_digests=tuple(doc["output_digests"]),
            tool_version=doc["tool_version"],
            prev_digest=doc["prev_digest"],
            digest=doc["digest"],
        )


@dataclass(frozen=True)
class ProvenanceLog:
    entries: tuple[ProvenanceEntry, ...] = ()

    @property
    def head_digest(self) -> str:
        return self.entries[-1].digest if self.entries else GENESIS_DIGEST

    def to_jsonl(self) -> str:
        lines = [compact_dumps(PROVENANCE_HEADER)]
        lines.extend(compact_dumps(entry.to_json()) for entry in self.entries)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ProvenanceLog":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines:
            raise DocsError("provenance log is empty; expected a header line")
        header = json.loads(lines[0])
        if header.get("format") != PROVENANCE_HEADER["format"]:
            raise DocsError(f"unknown provenance log format {header.get('format')!r}")
        entries = tuple(ProvenanceEntry.from_json(json.loads(line)) for line in lines[1:])
        return cls(entries)


def make_entry(
    log: ProvenanceLog,
    *,
    timestamp: str,
    actor: str,
    stage: str,
    decision_text: str,
    input_digests: Iterable[str] = (),
    output_digests: Iterable[str] = (),
    tool_version: str = "",
) -> ProvenanceEntry:
    """Build an entry chained onto the log's current head."""
    entry = ProvenanceEntry(
        timestamp=timestamp,
        actor=actor,
        stage=stage,
        decision_text=decision_text,
        input_digests=tuple(input_digests),
        output_digests=tuple(output_digests),
        tool_version=tool_version,
        prev_digest=log.head_digest,
        digest="",
    )
    return replace(entry, digest=entry.expected_digest())


def append_provenance(log: ProvenanceLog, entry: ProvenanceEntry) -> ProvenanceLog:
    """Append one entry; a mismatched chain or digest is fatal."""
    if entry.prev_digest != log.head_digest or entry.digest != entry.expected_digest():
        raise DocsError("provenance log tampered or forked")
    return ProvenanceLog((*log.entries, entry))


def verify_chain(log: ProvenanceLog) -> tuple[bool, int | None]:
    """Check every entry's digest and linkage; returns (ok, first bad index)."""
    prev = GENESIS_DIGEST
    for index, entry in enumerate(log.entries):
        if entry.prev_digest != prev or entry.digest != entry.expected_digest():
            return False, index
        prev = entry.digest
    return True, None
